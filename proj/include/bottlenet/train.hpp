#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

#include "bottlenet/dataset.hpp"
#include "bottlenet/graph.hpp"
#include "bottlenet/rng.hpp"

namespace bottlenet {

struct TrainConfig {
  std::size_t epochs = 10;
  double lr = 0.05;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  std::size_t crop_h = 0;  // 0 = no cropping
  std::size_t crop_w = 0;
  /// Recompute BatchNorm running statistics over the training set after the
  /// last epoch (weights frozen).
  bool recalibrate = true;
};

struct TrainResult {
  double accuracy = 0.0;  // held-out
  std::vector<double> epoch_loss;
};

/// Eval-mode accuracy in [0, 1]. Applies a center crop when configured.
inline double evaluate(NetworkGraph& graph, const Dataset& data, std::size_t crop_h = 0, std::size_t crop_w = 0,
                       std::size_t batch_size = 64) {
  if (data.empty()) throw DataError("evaluate: empty dataset");
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t first = 0; first < data.count(); first += batch_size) {
    idx.resize(std::min(batch_size, data.count() - first));
    std::iota(idx.begin(), idx.end(), first);
    Tensor x = data.batch(idx);
    if (crop_h > 0) x = crop_batch(x, crop_h, crop_w, nullptr);
    const Tensor logits = graph.run(x, 0, graph.size() - 1, Mode::eval);
    const std::size_t k = logits.shape().per_sample();
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const double* z = logits.data() + b * k;
      const std::size_t pred = static_cast<std::size_t>(std::max_element(z, z + k) - z);
      if (pred == data.labels[idx[b]]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.count());
}

/// Replaces every BatchNorm layer's running statistics with the average of
/// its batch statistics over `data` under the current weights.
inline void recalibrate_batchnorm(NetworkGraph& graph, const Dataset& data, std::size_t batch_size = 64,
                                  std::size_t crop_h = 0, std::size_t crop_w = 0) {
  std::vector<BatchNorm*> norms;
  for (std::size_t i = 0; i < graph.size(); ++i) {
    if (auto* bn = dynamic_cast<BatchNorm*>(&graph.layer(i))) norms.push_back(bn);
  }
  if (norms.empty() || data.count() < 2) return;
  std::vector<std::size_t> idx;
  std::size_t t = 0;
  for (std::size_t first = 0; first + 1 < data.count(); first += batch_size, ++t) {
    idx.resize(std::min(batch_size, data.count() - first));
    std::iota(idx.begin(), idx.end(), first);
    Tensor x = data.batch(idx);
    if (crop_h > 0) x = crop_batch(x, crop_h, crop_w, nullptr);
    for (auto* bn : norms) bn->set_momentum(1.0 / static_cast<double>(t + 1));
    graph.run(x, 0, graph.size() - 1, Mode::train);
  }
  for (auto* bn : norms) bn->set_momentum(BatchNorm::kMomentum);
}

/// Minibatch SGD with constant learning rate on softmax cross-entropy.
/// Shuffling and crops draw from streams derived from `cfg.seed`, so equal
/// seeds give bit-identical parameters.
inline TrainResult train(NetworkGraph& graph, const Dataset& train_set, const Dataset& test_set, const TrainConfig& cfg) {
  if (train_set.empty() || test_set.empty()) throw DataError("train: empty dataset");
  train_set.validate();
  test_set.validate();
  if (cfg.batch_size == 0) throw std::invalid_argument("train: batch size must be >= 1");
  const std::size_t classes = graph.output_shape().per_sample();
  if (train_set.num_classes > classes) throw DataError("train: dataset has more classes than the graph outputs");

  TrainResult result;
  std::vector<std::size_t> order(train_set.count());
  std::iota(order.begin(), order.end(), 0);
  auto params = graph.parameters();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, {0x5eed, epoch}));
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t first = 0; first < order.size(); first += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - first);
      // A single-sample batch has no batch statistics worth normalizing by.
      if (n < 2 && order.size() >= 2) continue;
      std::span<const std::size_t> idx(order.data() + first, n);
      Tensor x = train_set.batch(idx);
      if (cfg.crop_h > 0) x = crop_batch(x, cfg.crop_h, cfg.crop_w, &rng);
      const auto labels = train_set.batch_labels(idx);
      const Tensor logits = graph.forward(x, Mode::train);
      const LossResult loss = softmax_cross_entropy(logits, labels);
      const Gradients grads = graph.backward(loss.grad);
      sgd_step(params, grads, cfg.lr);
      loss_sum += loss.loss;
      ++batches;
    }
    graph.clear_trace();
    result.epoch_loss.push_back(batches ? loss_sum / static_cast<double>(batches) : 0.0);
  }
  if (cfg.recalibrate && cfg.epochs > 0) recalibrate_batchnorm(graph, train_set, 64, cfg.crop_h, cfg.crop_w);
  result.accuracy = evaluate(graph, test_set, cfg.crop_h, cfg.crop_w);
  return result;
}

/// Splits `data` 85/15 into train and held-out sets, then trains.
inline TrainResult train(NetworkGraph& graph, const Dataset& data, const TrainConfig& cfg) {
  if (data.empty()) throw DataError("train: empty dataset");
  auto s = split(data);
  return train(graph, s.train, s.test, cfg);
}

}  // namespace bottlenet
