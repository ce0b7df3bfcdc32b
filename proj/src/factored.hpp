#pragma once

// Token-factored evaluation of the constant-attention model. Because the
// attention pattern is fixed, the residual stream at '=' is
// x1(a, b) = e + ua[:, a] + ub[:, b], so every linear map applied to x1 can be
// precomputed per token instead of per input pair.

#include "pizzaquad/model.hpp"

namespace pizzaquad::detail {

struct TokenFactors {
    TokenFactors(const ModelWeights& w, int p);

    Matrix ov;            // sum_j W_O^j W_V^j
    Matrix xa, xb;        // token embeddings plus position, d_model x p
    Matrix ua, ub;        // 1/2 OV x*, d_model x p
    Vector e;             // '=' embedding plus position
    Matrix pa, pb;        // W_in u*, d_mlp x p
    Vector pe;            // W_in e + b_in
    Matrix neuron_logit;  // W_U[:p] W_out, p x d_mlp
    Matrix ra, rb;        // W_U[:p] u*, p x p
    Vector re;            // W_U[:p] (e + b_out)

    Matrix preactivations(const std::vector<std::pair<int, int>>& batch) const;
    Matrix logits_from_post(const Matrix& post, const std::vector<std::pair<int, int>>& batch) const;
};

}  // namespace pizzaquad::detail
