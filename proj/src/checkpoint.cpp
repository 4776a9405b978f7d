#include "cinetraj/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cinetraj/error.hpp"

namespace cinetraj {
namespace {

constexpr char kMagic[8] = {'C', 'T', 'R', 'J', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "little-endian host required");

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(std::string_view in, std::size_t& pos, const std::filesystem::path& path) {
  if (pos + sizeof(T) > in.size()) {
    throw Error(ErrorCode::kFormat, "truncated checkpoint: " + path.string());
  }
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

struct Parsed {
  nlohmann::json header;
  std::size_t blocks_at = 0;
  std::string bytes;
};

Parsed parse(const std::filesystem::path& path) {
  Parsed p;
  p.bytes = read_file(path);
  if (p.bytes.size() < sizeof(kMagic) || std::memcmp(p.bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorCode::kFormat, "not a checkpoint: " + path.string());
  }
  std::size_t pos = sizeof(kMagic);
  const auto version = take<std::uint32_t>(p.bytes, pos, path);
  if (version != kVersion) {
    throw Error(ErrorCode::kFormat, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto len = take<std::uint64_t>(p.bytes, pos, path);
  if (pos + len > p.bytes.size()) throw Error(ErrorCode::kFormat, "truncated checkpoint header");
  try {
    p.header = nlohmann::json::parse(std::string_view(p.bytes).substr(pos, len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormat, std::string("checkpoint header: ") + e.what());
  }
  p.blocks_at = pos + len;
  return p;
}

}  // namespace

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(ErrorCode::kIo, "cannot open for writing: " + tmp.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    f.flush();
    if (!f) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw Error(ErrorCode::kIo, "write failed: " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(ErrorCode::kIo, "cannot rename into place: " + path.string());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, "cannot open: " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void save_checkpoint(const std::filesystem::path& path, std::string_view kind,
                     nlohmann::json header, const nn::ParamStore& params) {
  header["kind"] = kind;
  auto& list = header["params"] = nlohmann::json::array();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& v = params.value(static_cast<int>(i));
    list.push_back({{"name", params.name(static_cast<int>(i))}, {"rows", v.rows()}, {"cols", v.cols()}});
  }
  const std::string h = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, h.size());
  out += h;
  out.reserve(out.size() + params.total_scalars() * sizeof(float));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& v = params.value(static_cast<int>(i));
    for (Eigen::Index j = 0; j < v.size(); ++j) put<float>(out, static_cast<float>(v.data()[j]));
  }
  write_file_atomic(path, out);
}

nlohmann::json read_checkpoint_header(const std::filesystem::path& path) {
  return parse(path).header;
}

nlohmann::json load_checkpoint(const std::filesystem::path& path, std::string_view kind,
                               nn::ParamStore& params) {
  Parsed p = parse(path);
  if (p.header.value("kind", "") != kind) {
    throw Error(ErrorCode::kFormat, "checkpoint kind is not " + std::string(kind));
  }
  const auto& list = p.header.at("params");
  if (list.size() != params.size()) {
    throw Error(ErrorCode::kFormat, "checkpoint parameter count mismatch");
  }
  std::size_t pos = p.blocks_at;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& v = params.value(static_cast<int>(i));
    const auto& e = list[i];
    if (e.at("name") != params.name(static_cast<int>(i)) || e.at("rows") != v.rows() ||
        e.at("cols") != v.cols()) {
      throw Error(ErrorCode::kFormat, "checkpoint layout mismatch at " + params.name(static_cast<int>(i)));
    }
    for (Eigen::Index j = 0; j < v.size(); ++j) v.data()[j] = take<float>(p.bytes, pos, path);
  }
  if (pos != p.bytes.size()) throw Error(ErrorCode::kFormat, "trailing bytes in checkpoint");
  return p.header;
}

}  // namespace cinetraj
