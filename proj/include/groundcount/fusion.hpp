#pragma once

// Dual-branch fusion of ViT patch embeddings with CNN detector features:
//
//   hA_i = gamma_i * p_i + beta_i,           (gamma_i, beta_i) = MLP(c_i)
//   hB_i = CrossAttn(q = Wq p_i, keys/values over the pair (c_i, g))
//   a_i  = sigmoid(MLP([p_i, c_i]))
//   h_i  = Wb (a_i hA_i + (1 - a_i) hB_i) + bb
//
// Both MLPs have one tanh hidden layer of width max(d_vit, d_cnn). Patches are
// independent, so forward and backward run over patches with OpenMP; the
// *_serial variants are the single-threaded reference used by tests and the
// benchmark.

#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace groundcount::fusion {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::runtime_error {
public:
    NonFiniteError(std::string what, Eigen::Index patch);
    Eigen::Index patch() const { return patch_; }

private:
    Eigen::Index patch_;
};

class MissingCacheError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

struct FusionDims {
    int d_vit = 16;
    int d_cnn = 12;
    int d_attn = 8;
    int d_out = 8;

    int hidden() const { return d_vit > d_cnn ? d_vit : d_cnn; }
    /// Throws ShapeError unless all widths are positive and d_out < d_vit.
    void validate() const;
    /// d_out defaults to half the patch width.
    static FusionDims with_default_bottleneck(int d_vit, int d_cnn, int d_attn);
};

struct FusionInputs {
    Matrix p;  // N x d_vit, one row per patch
    Matrix c;  // N x d_cnn, local CNN feature per patch
    Vector g;  // d_cnn, pooled global CNN feature

    Eigen::Index patches() const { return p.rows(); }
    void validate(const FusionDims& dims) const;
};

struct FusionParams {
    Matrix film_w1;  // H x d_cnn
    Vector film_b1;  // H
    Matrix film_w2;  // 2 d_vit x H, rows [gamma; beta]
    Vector film_b2;  // 2 d_vit

    Matrix attn_wq;  // d_attn x d_vit
    Matrix attn_wk;  // d_attn x d_cnn
    Matrix attn_wv;  // d_vit x d_cnn

    Matrix gate_w1;  // H x (d_vit + d_cnn)
    Vector gate_b1;  // H
    Vector gate_w2;  // H
    Vector gate_b2;  // 1

    Matrix bottleneck_w;  // d_out x d_vit
    Vector bottleneck_b;  // d_out

    static FusionParams zeros(const FusionDims& dims);
    /// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] from a seeded mt19937_64.
    static FusionParams init(const FusionDims& dims, std::uint64_t seed);

    void validate(const FusionDims& dims) const;
    std::size_t parameter_count() const;
};

/// Visits every tensor as fn(name, tensor). Works for const and non-const.
template <typename Params, typename Fn>
void for_each_tensor(Params& p, Fn&& fn) {
    fn("film_w1", p.film_w1);
    fn("film_b1", p.film_b1);
    fn("film_w2", p.film_w2);
    fn("film_b2", p.film_b2);
    fn("attn_wq", p.attn_wq);
    fn("attn_wk", p.attn_wk);
    fn("attn_wv", p.attn_wv);
    fn("gate_w1", p.gate_w1);
    fn("gate_b1", p.gate_b1);
    fn("gate_w2", p.gate_w2);
    fn("gate_b2", p.gate_b2);
    fn("bottleneck_w", p.bottleneck_w);
    fn("bottleneck_b", p.bottleneck_b);
}

/// Visits matching tensors of two parameter sets as fn(name, a_tensor, b_tensor).
template <typename A, typename B, typename Fn>
void for_each_tensor_pair(A& a, B& b, Fn&& fn) {
    fn("film_w1", a.film_w1, b.film_w1);
    fn("film_b1", a.film_b1, b.film_b1);
    fn("film_w2", a.film_w2, b.film_w2);
    fn("film_b2", a.film_b2, b.film_b2);
    fn("attn_wq", a.attn_wq, b.attn_wq);
    fn("attn_wk", a.attn_wk, b.attn_wk);
    fn("attn_wv", a.attn_wv, b.attn_wv);
    fn("gate_w1", a.gate_w1, b.gate_w1);
    fn("gate_b1", a.gate_b1, b.gate_b1);
    fn("gate_w2", a.gate_w2, b.gate_w2);
    fn("gate_b2", a.gate_b2, b.gate_b2);
    fn("bottleneck_w", a.bottleneck_w, b.bottleneck_w);
    fn("bottleneck_b", a.bottleneck_b, b.bottleneck_b);
}

Vector film_branch(const Vector& p, const Vector& c, const FusionParams& params);
Vector cross_attn_branch(const Vector& p, const Vector& c, const Vector& g, const FusionParams& params);
/// Softmax weights over (c, g) for the query from p.
Eigen::Vector2d attention_weights(const Vector& p, const Vector& c, const Vector& g,
                                  const FusionParams& params);
double gate(const Vector& p, const Vector& c, const FusionParams& params);

/// Intermediates kept by the forward pass for backward.
struct ForwardCache {
    Matrix film_hidden;  // N x H, tanh activations
    Matrix gamma;        // N x d_vit
    Matrix query;        // N x d_attn
    Matrix key_local;    // N x d_attn
    Vector key_global;   // d_attn
    Matrix value_local;  // N x d_vit
    Vector value_global; // d_vit
    Matrix attn;         // N x 2
    Matrix gate_hidden;  // N x H
};

struct FusionOutput {
    Matrix hA;     // N x d_vit
    Matrix hB;     // N x d_vit
    Vector alpha;  // N
    Matrix h_pre;  // N x d_vit, gated mix before the bottleneck
    Matrix h;      // N x d_out
    ForwardCache cache;
    bool has_cache = false;
};

FusionOutput fuse_forward(const FusionInputs& in, const FusionParams& params);
FusionOutput fuse_forward_serial(const FusionInputs& in, const FusionParams& params);

struct FusionGrads {
    FusionParams params;
    Matrix p;
    Matrix c;
    Vector g;
};

/// Gradients of sum(upstream .* h) with respect to every parameter and input.
FusionGrads fuse_backward(const FusionInputs& in, const FusionParams& params,
                          const FusionOutput& fwd, const Matrix& upstream);
FusionGrads fuse_backward_serial(const FusionInputs& in, const FusionParams& params,
                                 const FusionOutput& fwd, const Matrix& upstream);

}  // namespace groundcount::fusion
