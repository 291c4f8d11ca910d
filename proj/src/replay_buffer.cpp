#include "madspace/replay_buffer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "madspace/errors.hpp"

namespace madspace {

void SumTree::grow() {
  const std::size_t capacity = leaf_base_ == 0 ? 1 : 2 * leaf_base_;
  std::vector<double> nodes(2 * capacity, 0.0);
  for (std::size_t i = 0; i < size_; ++i) nodes[capacity + i] = nodes_[leaf_base_ + i];
  for (std::size_t i = capacity - 1; i >= 1; --i) nodes[i] = nodes[2 * i] + nodes[2 * i + 1];
  nodes_ = std::move(nodes);
  leaf_base_ = capacity;
}

void SumTree::push_back(double weight) {
  if (size_ == leaf_base_) grow();
  ++size_;
  set(size_ - 1, weight);
}

void SumTree::set(std::size_t i, double weight) {
  std::size_t node = leaf_base_ + i;
  nodes_[node] = weight;
  for (node /= 2; node >= 1; node /= 2) nodes_[node] = nodes_[2 * node] + nodes_[2 * node + 1];
}

std::size_t SumTree::find(double mass) const {
  std::size_t node = 1;
  while (node < leaf_base_) {
    const std::size_t left = 2 * node;
    if (mass < nodes_[left]) {
      node = left;
    } else {
      mass -= nodes_[left];
      node = left + 1;
    }
  }
  // Rounding can walk past the last populated leaf.
  return std::min(node - leaf_base_, size_ - 1);
}

PrioritizedBuffer::PrioritizedBuffer(double alpha, double epsilon)
    : alpha_(alpha), epsilon_(epsilon) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("PER alpha must lie in [0, 1]");
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    throw ValidationError("PER epsilon must be positive");
  }
}

double PrioritizedBuffer::weight_of(double priority) const {
  return std::pow(priority + epsilon_, alpha_);
}

void PrioritizedBuffer::add(PairSample sample) {
  samples_.push_back(std::move(sample));
  priorities_.push_back(max_priority_);
  tree_.push_back(weight_of(max_priority_));
}

void PrioritizedBuffer::add(std::vector<PairSample> samples) {
  samples_.reserve(samples_.size() + samples.size());
  priorities_.reserve(priorities_.size() + samples.size());
  for (PairSample& s : samples) add(std::move(s));
}

double PrioritizedBuffer::probability(std::size_t i) const {
  return tree_.weight(i) / tree_.total();
}

std::vector<std::size_t> PrioritizedBuffer::sample_indices(std::size_t batch_size,
                                                           std::mt19937_64& rng) const {
  if (empty()) throw ValidationError("cannot sample from an empty buffer");
  std::uniform_real_distribution<double> mass(0.0, tree_.total());
  std::vector<std::size_t> out(batch_size);
  for (std::size_t& i : out) i = tree_.find(mass(rng));
  return out;
}

std::vector<PairSample> PrioritizedBuffer::sample_batch(std::size_t batch_size,
                                                        std::mt19937_64& rng) const {
  std::vector<PairSample> out;
  out.reserve(batch_size);
  for (std::size_t i : sample_indices(batch_size, rng)) out.push_back(samples_[i]);
  return out;
}

void PrioritizedBuffer::update_priorities(std::span<const std::size_t> indices,
                                          std::span<const double> new_priorities) {
  if (indices.size() != new_priorities.size()) {
    throw ValidationError("update_priorities: index and priority counts differ");
  }
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= samples_.size()) {
      throw ValidationError("update_priorities: index " + std::to_string(indices[k]) +
                            " out of range (size " + std::to_string(samples_.size()) + ")");
    }
    const double p = new_priorities[k];
    if (!std::isfinite(p) || p < 0.0) {
      throw ValidationError("update_priorities: priority must be finite and non-negative");
    }
  }
  for (std::size_t k = 0; k < indices.size(); ++k) {
    priorities_[indices[k]] = new_priorities[k];
    tree_.set(indices[k], weight_of(new_priorities[k]));
    max_priority_ = std::max(max_priority_, new_priorities[k]);
  }
}

}  // namespace madspace
