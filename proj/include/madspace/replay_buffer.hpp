#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "madspace/trajectory.hpp"

namespace madspace {

/// Binary sum tree over non-negative weights. Parents are recomputed from their
/// children on every update, so totals never accumulate drift.
class SumTree {
 public:
  void push_back(double weight);
  void set(std::size_t i, double weight);
  double weight(std::size_t i) const { return nodes_[leaf_base_ + i]; }
  double total() const { return nodes_.empty() ? 0.0 : nodes_[1]; }
  std::size_t size() const { return size_; }
  /// Leaf whose cumulative interval contains `mass` in [0, total()).
  std::size_t find(double mass) const;

 private:
  void grow();

  std::size_t size_ = 0;
  std::size_t leaf_base_ = 0;  // capacity; leaves live at [capacity, 2 * capacity)
  std::vector<double> nodes_;
};

/// Pair samples drawn with probability proportional to (priority + epsilon)^alpha.
class PrioritizedBuffer {
 public:
  explicit PrioritizedBuffer(double alpha = 0.6, double epsilon = 0.1);

  /// New samples enter with the largest priority seen so far (1 for an empty buffer).
  void add(PairSample sample);
  void add(std::vector<PairSample> samples);

  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  const PairSample& sample(std::size_t i) const { return samples_.at(i); }
  double priority(std::size_t i) const { return priorities_.at(i); }
  double probability(std::size_t i) const;
  double alpha() const { return alpha_; }
  double epsilon() const { return epsilon_; }

  /// With-replacement draw of buffer indices. Throws ValidationError when empty.
  std::vector<std::size_t> sample_indices(std::size_t batch_size, std::mt19937_64& rng) const;
  std::vector<PairSample> sample_batch(std::size_t batch_size, std::mt19937_64& rng) const;

  void update_priorities(std::span<const std::size_t> indices,
                         std::span<const double> new_priorities);

 private:
  double weight_of(double priority) const;

  double alpha_;
  double epsilon_;
  double max_priority_ = 1.0;
  std::vector<PairSample> samples_;
  std::vector<double> priorities_;
  SumTree tree_;
};

}  // namespace madspace
