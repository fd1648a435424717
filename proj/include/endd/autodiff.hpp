#ifndef ENDD_AUTODIFF_HPP
#define ENDD_AUTODIFF_HPP

#include <cstdint>
#include <span>
#include <vector>

namespace endd::autodiff {

// Reverse-mode tape over dense vector/matrix values. Values live in a single
// arena that is reused across batches; ops are fused at the level the model
// needs (GRU step, additive attention, softmax losses) to keep node counts
// and dispatch overhead low.
class Tape {
  public:
    using NodeId = std::int32_t;

    Tape() = default;

    // Drops all nodes but keeps arena capacity.
    void clear();

    std::size_t num_nodes() const { return nodes_.size(); }

    // --- graph construction -------------------------------------------------
    NodeId leaf(const double* data, int rows, int cols = 1);
    NodeId leaf_zero(int rows, int cols = 1);

    NodeId embed(NodeId table, int row);
    NodeId matvec(NodeId w, NodeId x);
    NodeId affine(NodeId w, NodeId x, NodeId b);
    // w1 x1 + w2 x2 + b
    NodeId affine2(NodeId w1, NodeId x1, NodeId w2, NodeId x2, NodeId b);
    NodeId gru_step(NodeId wx, NodeId wh, NodeId b, NodeId x, NodeId h);
    NodeId tanh_vec(NodeId x);
    NodeId concat(NodeId a, NodeId b);
    NodeId add(NodeId a, NodeId b);
    // a + s * b
    NodeId add_scaled(NodeId a, NodeId b, double s);
    NodeId stack_rows(std::span<const NodeId> rows);
    NodeId attn_scores(NodeId u_rows, NodeId q, NodeId v);
    NodeId softmax(NodeId logits);
    NodeId weighted_sum_rows(NodeId h_rows, NodeId weights);
    NodeId dot(NodeId a, NodeId b);

    // --- scalar losses (all take raw logits) --------------------------------
    // -log softmax(logits)[target]
    NodeId ce_loss(NodeId logits, int target);
    // KL(target || softmax(logits)) for a constant target distribution
    NodeId kl_loss(NodeId logits, std::span<const double> target);
    // -[ln G(a0) - sum ln G(a_c) + sum (a_c - 1) s_c], a = exp(clamp(logits)),
    // s_c the mean log target probabilities
    NodeId dirichlet_nll_loss(NodeId logits, std::span<const double> mean_log_target);
    // KL(Dir(alpha_tilde) || Dir(exp(clamp(logits))))
    NodeId dirichlet_kl_loss(NodeId logits, std::span<const double> alpha_tilde);
    NodeId mean(std::span<const NodeId> scalars);

    // --- access --------------------------------------------------------------
    std::span<const double> value(NodeId id) const;
    std::span<const double> grad(NodeId id) const;
    int rows(NodeId id) const { return nodes_[id].rows; }
    int cols(NodeId id) const { return nodes_[id].cols; }

    // Reverse pass seeding d(loss)/d(loss) = 1. The loss must be scalar.
    void backward(NodeId loss);

  private:
    enum class Op : std::uint8_t {
        kLeaf, kEmbed, kMatvec, kAffine, kAffine2, kGru, kTanh, kConcat,
        kAdd, kAddScaled, kStackRows, kAttnScores, kSoftmax, kWeightedSum,
        kDot, kCe, kKl, kDirNll, kDirKl, kMean,
    };

    struct Node {
        Op op;
        NodeId in0 = -1, in1 = -1, in2 = -1, in3 = -1, in4 = -1;
        std::int32_t val = 0;        // offset into val_/grad_ arena
        std::int32_t rows = 0, cols = 1;
        std::int32_t aux = -1;       // offset into aux_ arena
        std::int32_t extra = -1;     // offset into extra_ (variadic inputs)
        std::int32_t n_extra = 0;
        std::int32_t itag = 0;       // small integer payload (e.g. CE target)
        double scalar = 0.0;
    };

    NodeId push(Op op, int rows, int cols, NodeId a = -1, NodeId b = -1,
                NodeId c = -1, NodeId d = -1, NodeId e = -1);
    double* val_ptr(NodeId id) { return val_.data() + nodes_[id].val; }
    const double* val_ptr(NodeId id) const { return val_.data() + nodes_[id].val; }
    double* grad_ptr(NodeId id) { return grad_.data() + nodes_[id].val; }
    std::int32_t alloc_aux(std::size_t n);

    std::vector<Node> nodes_;
    std::vector<double> val_;
    std::vector<double> grad_;
    std::vector<double> aux_;
    std::vector<std::int32_t> extra_;
};

}  // namespace endd::autodiff

#endif
