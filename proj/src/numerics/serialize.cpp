#include "bevprompt/numerics/serialize.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "bevprompt/errors.hpp"

namespace bevprompt::nn {

namespace {

constexpr std::array<char, 4> kMagic = {'B', 'P', 'T', 'N'};

template <typename U>
void put_le(std::ostream& out, U value) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
  char bytes[sizeof(U)];
  std::memcpy(bytes, &value, sizeof(U));
  out.write(bytes, sizeof(U));
}

template <typename U>
U get_le(std::istream& in) {
  char bytes[sizeof(U)];
  if (!in.read(bytes, sizeof(U))) throw DataError("tensor container: truncated stream");
  U value;
  std::memcpy(&value, bytes, sizeof(U));
  return value;
}

Tensor shaped(const std::vector<std::uint64_t>& dims) {
  if (dims.size() == 1) return Tensor(1, static_cast<Eigen::Index>(dims[0]));
  if (dims.size() == 2) return Tensor(static_cast<Eigen::Index>(dims[0]), static_cast<Eigen::Index>(dims[1]));
  throw DataError("tensor container: unsupported rank " + std::to_string(dims.size()));
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, 2);
  put_le<std::uint64_t>(out, static_cast<std::uint64_t>(t.rows()));
  put_le<std::uint64_t>(out, static_cast<std::uint64_t>(t.cols()));
  for (Eigen::Index i = 0; i < t.size(); ++i) put_le<double>(out, t.data()[i]);
}

Tensor read_tensor(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw DataError("tensor container: bad magic");
  }
  const auto rank = get_le<std::uint32_t>(in);
  std::vector<std::uint64_t> dims(rank);
  for (auto& d : dims) d = get_le<std::uint64_t>(in);
  Tensor t = shaped(dims);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = get_le<double>(in);
  return t;
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  write_tensor(out, t);
  if (!out) throw IoError("write failed: " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return read_tensor(in);
}

nlohmann::json tensor_to_json(const Tensor& t) {
  nlohmann::json data = nlohmann::json::array();
  for (Eigen::Index i = 0; i < t.size(); ++i) data.push_back(t.data()[i]);
  return {{"shape", {t.rows(), t.cols()}}, {"data", std::move(data)}};
}

Tensor tensor_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("shape") || !j.contains("data")) {
    throw DataError("tensor json: expected {shape, data}");
  }
  std::vector<std::uint64_t> dims;
  for (const auto& d : j.at("shape")) {
    if (!d.is_number_integer() || d.get<std::int64_t>() < 0) throw DataError("tensor json: bad dimension");
    dims.push_back(d.get<std::uint64_t>());
  }
  Tensor t = shaped(dims);
  const auto& data = j.at("data");
  if (!data.is_array() || static_cast<Eigen::Index>(data.size()) != t.size()) {
    throw DataError("tensor json: data length does not match shape");
  }
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = data[static_cast<std::size_t>(i)].get<double>();
  return t;
}

}  // namespace bevprompt::nn
