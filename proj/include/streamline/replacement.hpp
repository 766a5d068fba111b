#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>

#include "streamline/graph.hpp"
#include "streamline/tensor.hpp"

namespace streamline {

struct ModelConfig;

enum class ReplacementKind { None, FFN, SwiGLU, TransformerLayer };
enum class InitStrategy { Random, First, Last, Avg, Inherited };

std::string_view to_string(ReplacementKind kind);
std::string_view to_string(InitStrategy strategy);
ReplacementKind parse_replacement_kind(std::string_view text);
InitStrategy parse_init_strategy(std::string_view text);

using ParamMap = std::map<std::string, Tensor>;
using ParamBinding = std::map<std::string, Node>;

// Lightweight network spliced in place of a pruned block.
//
// Parameter names by kind:
//   FFN              norm [d] (residual form only), w_in [d x inner], w_out [inner x d]
//   SwiGLU           norm [d] (residual form only), w_gate, w_up [d x inner], w_down [inner x d]
//   TransformerLayer the layer names of TransformerLayerWeights (attn.wq, ..., mlp_norm)
//   None             no parameters; the identity map
//
// Residual form computes x + g(rmsnorm(x)); direct form computes g(x).
// TransformerLayer is residual by construction.
struct ReplacementNet {
    ReplacementKind kind = ReplacementKind::None;
    ParamMap params;
    std::size_t d_model = 0;
    std::size_t d_inner = 0;
    bool residual = true;
    InitStrategy init = InitStrategy::Inherited;

    std::size_t parameter_count() const;
    // Throws DimensionError if params do not match kind/d_model/d_inner.
    void validate(const ModelConfig& config) const;

    friend bool operator==(const ReplacementNet&, const ReplacementNet&) = default;
};

ParamBinding bind_params(Graph& graph, const ParamMap& params, bool requires_grad);

// Records h(x) on the graph. `x` is [T x d]; a TransformerLayer net treats
// the rows as one causal sequence, the feed-forward kinds act per row.
Node replacement_forward(Graph& graph, Node x, const ReplacementNet& net, const ParamBinding& params,
                         const ModelConfig& config);

} // namespace streamline
