#include "idforge/idv.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "idforge/error.hpp"

namespace idforge {

namespace {

constexpr char kMagic[4] = {'I', 'D', 'V', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const std::string& in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  return v;
}

}  // namespace

std::string encode_idv(const Matrix& rows, const std::optional<nlohmann::json>& metadata) {
  constexpr auto kMax = std::numeric_limits<std::uint32_t>::max();
  if (static_cast<std::uint64_t>(rows.rows()) > kMax || static_cast<std::uint64_t>(rows.cols()) > kMax) {
    fail(ErrorKind::shape, "encode_idv: matrix too large for u32 header");
  }
  std::string out(kMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(rows.rows()));
  put_u32(out, static_cast<std::uint32_t>(rows.cols()));
  out.reserve(out.size() + 4 * static_cast<std::size_t>(rows.size()));
  for (Eigen::Index i = 0; i < rows.size(); ++i) {
    put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(rows.data()[i])));
  }
  if (metadata) {
    const std::string text = metadata->dump();
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out += text;
  }
  return out;
}

IdvFile decode_idv(const std::string& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    fail(ErrorKind::format, "IDV1: bad magic or truncated header");
  }
  const std::uint64_t count = get_u32(bytes, 4);
  const std::uint64_t dim = get_u32(bytes, 8);
  const std::uint64_t payload = count * dim * 4;
  if (bytes.size() - 12 < payload) fail(ErrorKind::format, "IDV1: truncated payload");

  IdvFile file;
  file.rows.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dim));
  for (std::uint64_t i = 0; i < count * dim; ++i) {
    file.rows.data()[i] = static_cast<double>(std::bit_cast<float>(get_u32(bytes, 12 + 4 * i)));
  }
  std::size_t pos = 12 + payload;
  if (pos == bytes.size()) return file;
  if (bytes.size() - pos < 4) fail(ErrorKind::format, "IDV1: truncated metadata length");
  const std::uint32_t len = get_u32(bytes, pos);
  pos += 4;
  if (bytes.size() - pos != len) fail(ErrorKind::format, "IDV1: metadata length mismatch");
  try {
    file.metadata = nlohmann::json::parse(bytes.substr(pos));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, std::string("IDV1: metadata is not JSON: ") + e.what());
  }
  return file;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) fail(ErrorKind::io, "cannot open " + tmp.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) fail(ErrorKind::io, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::io, "rename to " + path.string() + " failed: " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_idv(const std::filesystem::path& path, const Matrix& rows,
               const std::optional<nlohmann::json>& metadata) {
  write_file_atomic(path, encode_idv(rows, metadata));
}

IdvFile read_idv(const std::filesystem::path& path) { return decode_idv(read_file(path)); }

}  // namespace idforge
