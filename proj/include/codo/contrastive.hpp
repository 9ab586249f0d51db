#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "codo/encoder.hpp"
#include "codo/nn.hpp"
#include "codo/tensor.hpp"

namespace codo::contrastive {

using LevelEmbeddings = std::array<Tensor, encoder::kLevels>;
using LevelVars = std::array<nn::Var, encoder::kLevels>;
// Oldest-first linearized queue contents, one per pyramid level; the loss
// graph keeps raw pointers into these, so the caller owns them for the
// lifetime of the backward pass.
using LevelSnapshots = std::array<std::vector<double>, encoder::kLevels>;

// Fixed-capacity FIFO of unit vectors backed by a ring buffer.
class NegativeQueue {
 public:
  NegativeQueue(int capacity, int dim);

  int capacity() const { return capacity_; }
  int dim() const { return dim_; }
  int size() const { return size_; }

  // Appends unit vectors (tolerance 1e-4 on the norm); once full, each
  // append evicts the oldest entry.
  void enqueue(const std::vector<Tensor>& batch);

  // Entries oldest-first as a (size * dim) row-major block.
  std::vector<double> snapshot() const;
  std::uint64_t content_hash() const;

 private:
  int capacity_;
  int dim_;
  int size_ = 0;
  int cursor_ = 0;
  std::vector<double> data_;
};

struct LossConfig {
  double temperature = 0.2;
  std::array<double, encoder::kLevels> level_weights{0.25, 0.25, 0.25, 0.25};

  void validate() const;
};

// -log softmax of the positive pair against the queued negatives.
double info_nce_value(const Tensor& q, const Tensor& k_pos,
                      const std::vector<double>& negatives, double tau);
double info_nce_value(const Tensor& q, const Tensor& k_pos,
                      const NegativeQueue& queue, double tau);

// Weighted per-level InfoNCE; differentiable in q.
nn::Var hierarchical_loss(const LevelVars& q, const LevelEmbeddings& k,
                          const LevelSnapshots& snapshots, const LossConfig& cfg);

// Sum over key views of hierarchical_loss, every term against the same
// snapshots. Empty key list is invalid.
nn::Var multi_view_loss(const LevelVars& q, const std::vector<LevelEmbeddings>& keys,
                        const LevelSnapshots& snapshots, const LossConfig& cfg);

LevelSnapshots snapshot_all(const std::array<NegativeQueue, encoder::kLevels>& queues);

}  // namespace codo::contrastive
