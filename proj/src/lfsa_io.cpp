#include <algorithm>
#include "fairlab/lfsa_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "fairlab/errors.hpp"

namespace fairlab {
namespace {

static_assert(sizeof(float) == 4);

template <typename T>
void put_le(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(std::begin(bytes), std::end(bytes));
  }
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& in, const std::filesystem::path& path) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw ParseError("truncated LFSA file " + path.string());
  }
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(std::begin(bytes), std::end(bytes));
  }
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

void write_rows(const std::filesystem::path& path, std::uint32_t dim,
                std::uint64_t count, std::span<const double> data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write("LFSA", 4);
  put_le<std::uint32_t>(out, kLfsaVersion);
  put_le<std::uint32_t>(out, dim);
  put_le<std::uint64_t>(out, count);
  for (double x : data) put_le<float>(out, static_cast<float>(x));
  if (!out) throw Error("failed writing " + path.string());
}

}  // namespace

void write_lfsa(const std::filesystem::path& path, const Matrix& rows) {
  write_rows(path, static_cast<std::uint32_t>(rows.cols()), rows.rows(),
             rows.data());
}

void write_lfsa(const std::filesystem::path& path, std::span<const double> flat) {
  write_rows(path, static_cast<std::uint32_t>(flat.size()), 1, flat);
}

Matrix read_lfsa(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "LFSA", 4) != 0) {
    throw ParseError("bad LFSA magic in " + path.string());
  }
  const auto version = get_le<std::uint32_t>(in, path);
  if (version != kLfsaVersion) {
    throw ParseError("unsupported LFSA version " + std::to_string(version));
  }
  const auto dim = get_le<std::uint32_t>(in, path);
  const auto count = get_le<std::uint64_t>(in, path);
  Matrix rows(count, dim);
  for (double& x : rows.data()) x = get_le<float>(in, path);
  if (in.peek() != std::char_traits<char>::eof()) {
    throw ParseError("trailing bytes in LFSA file " + path.string());
  }
  return rows;
}

std::vector<double> read_lfsa_flat(const std::filesystem::path& path) {
  return std::move(read_lfsa(path).data());
}

void write_lfsa_index(const std::filesystem::path& path,
                      std::span<const std::string> ids) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (std::size_t i = 0; i < ids.size(); ++i) out << i << '\t' << ids[i] << '\n';
}

std::vector<std::string> read_lfsa_index(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.substr(0, tab) != std::to_string(ids.size())) {
      throw ParseError("expected row<TAB>id with consecutive rows", line_no);
    }
    ids.push_back(line.substr(tab + 1));
  }
  return ids;
}

void round_to_float(std::span<double> values) {
  for (double& x : values) x = static_cast<float>(x);
}

std::string file_digest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return {};
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buffer[1 << 14];
  while (in.read(buffer, sizeof(buffer)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buffer[i]);
      h *= 0x100000001b3ULL;
    }
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

}  // namespace fairlab
