#ifndef BEVPROMPT_NUMERICS_SERIALIZE_HPP
#define BEVPROMPT_NUMERICS_SERIALIZE_HPP

#include <filesystem>
#include <iosfwd>

#include <nlohmann/json.hpp>

#include "bevprompt/numerics/tensor.hpp"

namespace bevprompt::nn {

// Binary container:
//   "BPTN" | u32 rank | rank x u64 dims | prod(dims) x f64   (all little-endian)
// Tensors are written with rank 2. Rank 1 files load as 1 x n.

void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

/// {"shape": [rows, cols], "data": [row-major values]}
nlohmann::json tensor_to_json(const Tensor& t);
Tensor tensor_from_json(const nlohmann::json& j);

}  // namespace bevprompt::nn

#endif  // BEVPROMPT_NUMERICS_SERIALIZE_HPP
