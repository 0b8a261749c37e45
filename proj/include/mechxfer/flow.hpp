#pragma once

// Glow-style invertible network used as the shared mixing estimate.
//
// Layout: one actnorm layer at the entry, then `depth` blocks of
// (invertible linear map -> affine coupling). The parameterized direction
// is analysis (data z -> independent components s); synthesis is its exact
// algebraic inverse.
//
// Affine coupling with split (d1, d2) = (floor(D/2), D - floor(D/2)):
//   (x1, x2) -> (x1, (tanh(s(x1)) + 1) * x2 + t(x1))
// where s and t share a ReLU hidden layer. The scale lies in (0, 2), so the
// inverse never divides by zero.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "mechxfer/autodiff.hpp"
#include "mechxfer/tensor.hpp"

namespace mechxfer {

struct FlowConfig {
    std::size_t dim = 2;
    std::size_t depth = 8;
    std::size_t coupling_hidden = 32;

    std::size_t split_first() const noexcept { return dim / 2; }
    std::size_t split_second() const noexcept { return dim - dim / 2; }
    void validate() const;
};

struct CouplingNet {
    Tensor w_in;     // d1 x H
    Tensor b_in;     // 1 x H
    Tensor w_scale;  // H x d2
    Tensor b_scale;  // 1 x d2
    Tensor w_shift;  // H x d2
    Tensor b_shift;  // 1 x d2
};

struct FlowBlock {
    Tensor mixing;  // D x D, applied as y = x * mixing for row vectors
    CouplingNet coupling;
};

struct FlowParams {
    FlowConfig config;
    Tensor actnorm_scale;  // 1 x D
    Tensor actnorm_bias;   // 1 x D
    std::vector<FlowBlock> blocks;
};

class SingularFlowError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Below this |det| an invertible linear block is treated as singular.
inline constexpr double kSingularDeterminant = 1e-12;

// Weights of coupling networks ~ N(0, 1/m) with m the parameter count of the
// layer; mixing matrices random orthogonal. With `init_batch`, actnorm is set
// so the batch leaves the first layer with zero mean and unit variance per
// dimension; otherwise actnorm is the identity.
FlowParams init_flow(const FlowConfig& config, std::uint64_t seed, const std::optional<Matrix>& init_batch = std::nullopt);

// Flow whose analysis and synthesis maps are both the identity.
FlowParams identity_flow(const FlowConfig& config);

// Checks shapes, finiteness, nonzero actnorm scale and invertible mixing.
void validate_flow(const FlowParams& params);

// Row-wise analysis of a batch (n x D) and of a single point.
Matrix analyze(const FlowParams& params, const Matrix& z);
Vector analyze(const FlowParams& params, const Vector& z);

// Exact inverse of analyze.
Matrix synthesize(const FlowParams& params, const Matrix& s);
Vector synthesize(const FlowParams& params, const Vector& s);

// Output of the entry actnorm layer only.
Matrix actnorm_forward(const FlowParams& params, const Matrix& z);
// One coupling layer in the analysis direction.
Matrix coupling_forward(const FlowConfig& config, const CouplingNet& net, const Matrix& x);

// Tape view of flow parameters, for differentiating through analysis.
struct FlowVars {
    FlowConfig config;
    Var actnorm_scale;
    Var actnorm_bias;
    struct Block {
        Var mixing, w_in, b_in, w_scale, b_scale, w_shift, b_shift;
    };
    std::vector<Block> blocks;
};

FlowVars flow_vars(const FlowConfig& config, const ParamVars& vars, const std::string& prefix = "flow.");
FlowVars flow_constants(Tape& tape, const FlowParams& params);
Var analyze(const FlowVars& flow, Var z);

// Parameter naming: prefix + "actnorm.scale", prefix + "block03.w_in", ...
ParamSet flow_param_set(const FlowParams& params, const std::string& prefix = "flow.");
FlowParams flow_from_param_set(const FlowConfig& config, const ParamSet& set, const std::string& prefix = "flow.");

// Versioned JSON with hex-float encoded values (bit-exact round trip).
nlohmann::json flow_to_json(const FlowParams& params);
FlowParams flow_from_json(const nlohmann::json& j);
void save_flow(const FlowParams& params, const std::filesystem::path& path);
FlowParams load_flow(const std::filesystem::path& path);

}  // namespace mechxfer
