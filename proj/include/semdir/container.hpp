#pragma once

// Versioned artifact container shared by checkpoints, tangent frames and
// direction bases.
//
//   SEMDIR-CONTAINER\n
//   format 1\n
//   kind <kind>\n
//   meta <key> <value...>\n        (zero or more, order preserved)
//   block <name> <rows> <cols>\n   (zero or more, order preserved)
//   end\n
//   <payload>
//
// The payload is every block in declaration order, column-major,
// little-endian IEEE-754 binary32.

#include "semdir/core.hpp"

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace semdir {

inline constexpr const char* kContainerMagic = "SEMDIR-CONTAINER";
inline constexpr int kContainerFormat = 1;

struct Container {
  std::string kind;
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<std::pair<std::string, Mat>> blocks;

  void set(const std::string& key, const std::string& value) {
    require(key.find_first_of(" \n") == std::string::npos && value.find('\n') == std::string::npos,
            ErrorKind::invalid_argument, "container keys must be single tokens");
    for (auto& [k, v] : meta)
      if (k == key) {
        v = value;
        return;
      }
    meta.emplace_back(key, value);
  }

  bool has(const std::string& key) const {
    for (const auto& [k, v] : meta)
      if (k == key) return true;
    return false;
  }

  const std::string& get(const std::string& key) const {
    for (const auto& [k, v] : meta)
      if (k == key) return v;
    throw Error(ErrorKind::format_error, "container has no '" + key + "' entry");
  }

  void add_block(const std::string& name, Mat m) { blocks.emplace_back(name, std::move(m)); }

  const Mat& block(const std::string& name) const {
    for (const auto& [n, m] : blocks)
      if (n == name) return m;
    throw Error(ErrorKind::format_error, "container has no block '" + name + "'");
  }
};

inline std::string serialize(const Container& c) {
  std::ostringstream os;
  os << kContainerMagic << "\n" << "format " << kContainerFormat << "\n" << "kind " << c.kind << "\n";
  for (const auto& [k, v] : c.meta) os << "meta " << k << " " << v << "\n";
  for (const auto& [n, m] : c.blocks) os << "block " << n << " " << m.rows() << " " << m.cols() << "\n";
  os << "end\n";
  std::string out = os.str();
  for (const auto& [n, m] : c.blocks) {
    for (Index i = 0; i < m.size(); ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(m.data()[i]));
      for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
    }
  }
  return out;
}

inline Container deserialize(const std::string& bytes) {
  std::size_t pos = 0;
  auto next_line = [&]() {
    const std::size_t nl = bytes.find('\n', pos);
    require(nl != std::string::npos, ErrorKind::format_error, "truncated container header");
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  require(next_line() == kContainerMagic, ErrorKind::format_error, "bad magic");
  {
    std::istringstream is(next_line());
    std::string tag;
    int version = 0;
    is >> tag >> version;
    require(tag == "format" && version == kContainerFormat, ErrorKind::format_error, "unsupported container format");
  }
  Container c;
  {
    const std::string line = next_line();
    require(line.rfind("kind ", 0) == 0, ErrorKind::format_error, "missing kind line");
    c.kind = line.substr(5);
  }
  std::vector<std::pair<std::string, std::pair<Index, Index>>> shapes;
  for (;;) {
    const std::string line = next_line();
    if (line == "end") break;
    if (line.rfind("meta ", 0) == 0) {
      const std::size_t sp = line.find(' ', 5);
      require(sp != std::string::npos, ErrorKind::format_error, "bad meta line");
      c.meta.emplace_back(line.substr(5, sp - 5), line.substr(sp + 1));
    } else if (line.rfind("block ", 0) == 0) {
      std::istringstream is(line.substr(6));
      std::string name;
      Index rows = -1, cols = -1;
      is >> name >> rows >> cols;
      require(!is.fail() && rows >= 0 && cols >= 0, ErrorKind::format_error, "bad block line");
      shapes.push_back({name, {rows, cols}});
    } else {
      throw Error(ErrorKind::format_error, "unexpected header line '" + line + "'");
    }
  }
  for (const auto& [name, shape] : shapes) {
    Mat m(shape.first, shape.second);
    const std::size_t need = std::size_t(m.size()) * 4;
    require(bytes.size() - pos >= need, ErrorKind::format_error, "truncated block '" + name + "'");
    for (Index i = 0; i < m.size(); ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= std::uint32_t(static_cast<unsigned char>(bytes[pos + std::size_t(b)])) << (8 * b);
      pos += 4;
      m.data()[i] = double(std::bit_cast<float>(bits));
    }
    c.blocks.emplace_back(name, std::move(m));
  }
  require(pos == bytes.size(), ErrorKind::format_error, "trailing bytes after payload");
  return c;
}

inline void write_container(const std::filesystem::path& path, const Container& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  require(bool(os), ErrorKind::io_error, "cannot write " + path.string());
  const std::string bytes = serialize(c);
  os.write(bytes.data(), std::streamsize(bytes.size()));
  require(bool(os), ErrorKind::io_error, "write failed for " + path.string());
}

inline Container read_container(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(bool(is), ErrorKind::io_error, "cannot read " + path.string());
  std::ostringstream buf;
  buf << is.rdbuf();
  return deserialize(buf.str());
}

}  // namespace semdir
