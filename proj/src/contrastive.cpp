#include "codo/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "codo/common.hpp"

namespace codo::contrastive {

NegativeQueue::NegativeQueue(int capacity, int dim)
    : capacity_(capacity), dim_(dim) {
  if (capacity < 1) throw std::invalid_argument("queue capacity must be >= 1");
  if (dim < 1) throw std::invalid_argument("queue dim must be >= 1");
  data_.resize(static_cast<std::size_t>(capacity) * dim);
}

void NegativeQueue::enqueue(const std::vector<Tensor>& batch) {
  for (const Tensor& v : batch) {
    if (v.numel() != dim_)
      throw std::invalid_argument("queue entry has dimension " +
                                  std::to_string(v.numel()) + ", expected " +
                                  std::to_string(dim_));
    if (std::abs(v.norm2() - 1.0) > 1e-4)
      throw std::invalid_argument("queue entries must be unit vectors");
  }
  for (const Tensor& v : batch) {
    std::copy(v.data.begin(), v.data.end(),
              data_.begin() + static_cast<std::ptrdiff_t>(cursor_) * dim_);
    cursor_ = (cursor_ + 1) % capacity_;
    size_ = std::min(size_ + 1, capacity_);
  }
}

std::vector<double> NegativeQueue::snapshot() const {
  std::vector<double> out(static_cast<std::size_t>(size_) * dim_);
  if (size_ < capacity_) {
    std::copy(data_.begin(), data_.begin() + static_cast<std::ptrdiff_t>(size_) * dim_,
              out.begin());
  } else {
    const auto split = static_cast<std::ptrdiff_t>(cursor_) * dim_;
    std::copy(data_.begin() + split, data_.end(), out.begin());
    std::copy(data_.begin(), data_.begin() + split,
              out.begin() + (data_.size() - static_cast<std::size_t>(split)));
  }
  return out;
}

std::uint64_t NegativeQueue::content_hash() const {
  const std::vector<double> snap = snapshot();
  std::uint64_t h = fnv1a(&size_, sizeof size_);
  return fnv1a(snap.data(), snap.size() * sizeof(double), h);
}

void LossConfig::validate() const {
  if (!(temperature > 0.0))
    throw std::invalid_argument("temperature must be positive");
  double sum = 0.0;
  for (const double w : level_weights) {
    if (w < 0.0) throw std::invalid_argument("level weights must be non-negative");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("level weights must sum to 1");
}

double info_nce_value(const Tensor& q, const Tensor& k_pos,
                      const std::vector<double>& negatives, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("temperature must be positive");
  if (q.numel() != k_pos.numel())
    throw std::invalid_argument("query/key dimension mismatch");
  const auto d = static_cast<std::size_t>(q.numel());
  if (negatives.size() % d != 0)
    throw std::invalid_argument("negative block size is not a multiple of dim");
  const std::size_t n = negatives.size() / d;

  const double pos = q.dot(k_pos) / tau;
  double max_logit = pos;
  std::vector<double> logits(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += q.data[j] * negatives[i * d + j];
    logits[i] = acc / tau;
    max_logit = std::max(max_logit, logits[i]);
  }
  double denom = std::exp(pos - max_logit);
  for (const double l : logits) denom += std::exp(l - max_logit);
  return max_logit + std::log(denom) - pos;
}

double info_nce_value(const Tensor& q, const Tensor& k_pos,
                      const NegativeQueue& queue, double tau) {
  return info_nce_value(q, k_pos, queue.snapshot(), tau);
}

nn::Var hierarchical_loss(const LevelVars& q, const LevelEmbeddings& k,
                          const LevelSnapshots& snapshots, const LossConfig& cfg) {
  cfg.validate();
  std::vector<nn::Var> terms;
  std::vector<double> weights;
  for (std::size_t l = 0; l < encoder::kLevels; ++l) {
    const auto d = static_cast<std::size_t>(q[l]->value.numel());
    if (snapshots[l].size() % d != 0)
      throw std::invalid_argument("snapshot size mismatch at level " +
                                  std::to_string(l));
    const int n_neg = static_cast<int>(snapshots[l].size() / d);
    terms.push_back(nn::info_nce_loss(q[l], k[l], snapshots[l].data(), n_neg,
                                      cfg.temperature));
    weights.push_back(cfg.level_weights[l]);
  }
  return nn::weighted_sum(terms, weights);
}

nn::Var multi_view_loss(const LevelVars& q, const std::vector<LevelEmbeddings>& keys,
                        const LevelSnapshots& snapshots, const LossConfig& cfg) {
  if (keys.empty()) throw std::invalid_argument("multi_view_loss needs >= 1 key");
  std::vector<nn::Var> terms;
  terms.reserve(keys.size());
  for (const auto& k : keys)
    terms.push_back(hierarchical_loss(q, k, snapshots, cfg));
  return nn::weighted_sum(terms, std::vector<double>(keys.size(), 1.0));
}

LevelSnapshots snapshot_all(const std::array<NegativeQueue, encoder::kLevels>& queues) {
  LevelSnapshots snaps;
  for (std::size_t l = 0; l < encoder::kLevels; ++l) snaps[l] = queues[l].snapshot();
  return snaps;
}

}  // namespace codo::contrastive
