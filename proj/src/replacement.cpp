#include "streamline/replacement.hpp"

#include "streamline/error.hpp"
#include "streamline/model.hpp"

namespace streamline {

std::string_view to_string(ReplacementKind kind) {
    switch (kind) {
    case ReplacementKind::None: return "none";
    case ReplacementKind::FFN: return "ffn";
    case ReplacementKind::SwiGLU: return "swiglu";
    case ReplacementKind::TransformerLayer: return "layer";
    }
    return "?";
}

std::string_view to_string(InitStrategy strategy) {
    switch (strategy) {
    case InitStrategy::Random: return "random";
    case InitStrategy::First: return "first";
    case InitStrategy::Last: return "last";
    case InitStrategy::Avg: return "avg";
    case InitStrategy::Inherited: return "n/a";
    }
    return "?";
}

ReplacementKind parse_replacement_kind(std::string_view text) {
    if (text == "none") return ReplacementKind::None;
    if (text == "ffn") return ReplacementKind::FFN;
    if (text == "swiglu") return ReplacementKind::SwiGLU;
    if (text == "layer") return ReplacementKind::TransformerLayer;
    throw ConfigError("unknown replacement kind '" + std::string(text) + "' (expected none|ffn|swiglu|layer)");
}

InitStrategy parse_init_strategy(std::string_view text) {
    if (text == "random") return InitStrategy::Random;
    if (text == "first") return InitStrategy::First;
    if (text == "last") return InitStrategy::Last;
    if (text == "avg") return InitStrategy::Avg;
    if (text == "n/a") return InitStrategy::Inherited;
    throw ConfigError("unknown init strategy '" + std::string(text) + "' (expected random|first|last|avg)");
}

std::size_t ReplacementNet::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params) n += t.size();
    return n;
}

void ReplacementNet::validate(const ModelConfig& config) const {
    if (d_model != config.d_model) {
        throw DimensionError("replacement d_model " + std::to_string(d_model) + " does not match model d_model " +
                             std::to_string(config.d_model));
    }
    auto expect = [&](const std::string& name, const Shape& shape) {
        auto it = params.find(name);
        if (it == params.end()) throw DimensionError("replacement is missing parameter '" + name + "'");
        if (it->second.shape() != shape) {
            throw DimensionError("replacement parameter '" + name + "' has shape " +
                                 shape_string(it->second.shape()) + ", expected " + shape_string(shape));
        }
    };
    const std::size_t d = d_model;
    std::size_t expected_count = 0;
    switch (kind) {
    case ReplacementKind::None: break;
    case ReplacementKind::FFN:
        if (d_inner == 0) throw DimensionError("FFN replacement needs d_inner > 0");
        expect("w_in", {d, d_inner});
        expect("w_out", {d_inner, d});
        expected_count = 2;
        if (residual) {
            expect("norm", {d});
            ++expected_count;
        }
        break;
    case ReplacementKind::SwiGLU:
        if (d_inner == 0) throw DimensionError("SwiGLU replacement needs d_inner > 0");
        expect("w_gate", {d, d_inner});
        expect("w_up", {d, d_inner});
        expect("w_down", {d_inner, d});
        expected_count = 3;
        if (residual) {
            expect("norm", {d});
            ++expected_count;
        }
        break;
    case ReplacementKind::TransformerLayer:
        if (!residual) throw DimensionError("TransformerLayer replacement is always residual");
        for (const char* name : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) expect(name, {d, d});
        expect("mlp.w_gate", {d, d_inner});
        expect("mlp.w_up", {d, d_inner});
        expect("mlp.w_down", {d_inner, d});
        expect("attn_norm", {d});
        expect("mlp_norm", {d});
        expected_count = 9;
        break;
    }
    if (params.size() != expected_count) {
        throw DimensionError("replacement of kind " + std::string(to_string(kind)) + " has " +
                             std::to_string(params.size()) + " parameters, expected " +
                             std::to_string(expected_count));
    }
}

ParamBinding bind_params(Graph& graph, const ParamMap& params, bool requires_grad) {
    ParamBinding out;
    for (const auto& [name, t] : params) out.emplace(name, graph.leaf_ref(t, requires_grad));
    return out;
}

Node replacement_forward(Graph& g, Node x, const ReplacementNet& net, const ParamBinding& p,
                         const ModelConfig& config) {
    switch (net.kind) {
    case ReplacementKind::None: return x;
    case ReplacementKind::FFN: {
        Node in = net.residual ? g.rmsnorm(x, p.at("norm"), config.norm_eps) : x;
        Node y = g.matmul(g.silu(g.matmul(in, p.at("w_in"))), p.at("w_out"));
        return net.residual ? g.add(x, y) : y;
    }
    case ReplacementKind::SwiGLU: {
        Node in = net.residual ? g.rmsnorm(x, p.at("norm"), config.norm_eps) : x;
        Node gated = g.mul(g.silu(g.matmul(in, p.at("w_gate"))), g.matmul(in, p.at("w_up")));
        Node y = g.matmul(gated, p.at("w_down"));
        return net.residual ? g.add(x, y) : y;
    }
    case ReplacementKind::TransformerLayer: return layer_forward(g, x, layer_binding(p), config);
    }
    throw ContractError("unknown replacement kind");
}

} // namespace streamline
