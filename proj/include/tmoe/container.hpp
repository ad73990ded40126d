#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

#include "tmoe/tensor.hpp"

namespace tmoe {

// TMOE container: magic "TMOE", version u32, rows u32, cols u32, fps f32,
// then rows*cols little-endian f32 values row-major.
inline constexpr uint32_t kContainerVersion = 1;

inline void save_container(const std::string& path, const Tensor<float>& m, float fps) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_container: cannot open " + path);
  f.write("TMOE", 4);
  uint32_t ver = kContainerVersion, rows = m.rows, cols = m.cols;
  f.write(reinterpret_cast<const char*>(&ver), 4);
  f.write(reinterpret_cast<const char*>(&rows), 4);
  f.write(reinterpret_cast<const char*>(&cols), 4);
  f.write(reinterpret_cast<const char*>(&fps), 4);
  f.write(reinterpret_cast<const char*>(m.data.data()),
          static_cast<std::streamsize>(m.size() * sizeof(float)));
  if (!f) throw std::runtime_error("save_container: write failed for " + path);
}

struct ContainerData {
  Tensor<float> frames;
  float fps = 0;
};

inline ContainerData load_container(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_container: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "TMOE", 4) != 0)
    throw std::runtime_error("load_container: bad magic in " + path);
  uint32_t ver = 0, rows = 0, cols = 0;
  float fps = 0;
  f.read(reinterpret_cast<char*>(&ver), 4);
  f.read(reinterpret_cast<char*>(&rows), 4);
  f.read(reinterpret_cast<char*>(&cols), 4);
  f.read(reinterpret_cast<char*>(&fps), 4);
  if (!f || ver != kContainerVersion)
    throw std::runtime_error("load_container: corrupt header in " + path);
  if (rows == 0 || cols == 0 || rows > (1u << 26) || cols > (1u << 20))
    throw std::runtime_error("load_container: implausible dimensions in " + path);
  ContainerData out;
  out.fps = fps;
  out.frames = Tensor<float>(static_cast<int>(rows), static_cast<int>(cols));
  f.read(reinterpret_cast<char*>(out.frames.data.data()),
         static_cast<std::streamsize>(out.frames.size() * sizeof(float)));
  if (!f) throw std::runtime_error("load_container: truncated payload in " + path);
  return out;
}

}  // namespace tmoe
