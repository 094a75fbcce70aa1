#include <map>

#include "w4p/dataset.hpp"
#include "w4p/error.hpp"
#include "w4p/rng.hpp"

namespace w4p {

BatchSampler::BatchSampler(Dataset dataset, std::size_t batch_size, std::uint64_t seed, SamplerConfig cfg)
    : dataset_(std::move(dataset)), batch_size_(batch_size), seed_(seed), cfg_(cfg) {
  require(!dataset_.empty(), ErrorKind::Empty, "sampler: dataset is empty");
  require(batch_size_ >= 1, ErrorKind::InvalidArgument, "sampler: batch_size must be >= 1");
  if (!cfg_.identity_aware) {
    require(batch_size_ <= dataset_.size(), ErrorKind::InvalidArgument,
            "sampler: batch_size " + std::to_string(batch_size_) + " exceeds dataset size " +
                std::to_string(dataset_.size()));
    return;
  }
  require(cfg_.max_per_identity >= 1, ErrorKind::InvalidArgument, "sampler: max_per_identity must be >= 1");
  std::map<std::string, std::size_t> counts;
  for (const auto& r : dataset_.images()) ++counts[r.identity_id];
  std::size_t capacity = 0;
  for (const auto& [id, n] : counts) capacity += std::min<std::size_t>(n, static_cast<std::size_t>(cfg_.max_per_identity));
  require(batch_size_ <= capacity, ErrorKind::InvalidArgument,
          "sampler: batch_size " + std::to_string(batch_size_) + " exceeds identity-aware capacity " +
              std::to_string(capacity) + " (" + std::to_string(counts.size()) + " identities x at most " +
              std::to_string(cfg_.max_per_identity) + ")");
}

std::vector<std::vector<std::size_t>> BatchSampler::epoch_plan(std::size_t epoch) const {
  std::vector<std::size_t> order(dataset_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed({seed_, epoch, 0x5a3b1e}));
  rng.shuffle(order);

  std::vector<std::vector<std::size_t>> plan;
  if (!cfg_.identity_aware) {
    for (std::size_t s = 0; (s + 1) * batch_size_ <= order.size(); ++s)
      plan.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s * batch_size_),
                        order.begin() + static_cast<std::ptrdiff_t>((s + 1) * batch_size_));
    return plan;
  }

  const auto cap = static_cast<std::size_t>(cfg_.max_per_identity);
  std::vector<std::size_t> pending;
  std::size_t cursor = 0;
  while (true) {
    std::vector<std::size_t> batch;
    std::map<std::string_view, std::size_t> counts;
    std::vector<std::size_t> deferred;
    auto offer = [&](std::size_t idx) {
      const std::string_view id = dataset_.image(idx).identity_id;
      if (batch.size() < batch_size_ && counts[id] < cap) {
        ++counts[id];
        batch.push_back(idx);
      } else {
        deferred.push_back(idx);
      }
    };
    for (auto idx : pending) offer(idx);
    while (batch.size() < batch_size_ && cursor < order.size()) offer(order[cursor++]);
    pending = std::move(deferred);
    if (batch.size() < batch_size_) break;
    plan.push_back(std::move(batch));
  }
  return plan;
}

std::size_t BatchSampler::steps_per_epoch(std::size_t epoch) const { return epoch_plan(epoch).size(); }

Batch BatchSampler::batch(std::size_t epoch, std::size_t step) const {
  auto plan = epoch_plan(epoch);
  require(step < plan.size(), ErrorKind::InvalidArgument,
          "sampler: step " + std::to_string(step) + " beyond epoch length " + std::to_string(plan.size()));
  return make_batch(dataset_, std::move(plan[step]));
}

Batch make_batch(const Dataset& dataset, std::vector<std::size_t> indices) {
  Batch b;
  if (dataset.has_captions()) b.captions.emplace();
  for (auto i : indices) {
    b.images.push_back(dataset.image(i));
    b.identity_ids.push_back(dataset.image(i).identity_id);
    if (b.captions) b.captions->push_back(dataset.caption(i));
  }
  b.indices = std::move(indices);
  return b;
}

Batch sample_batch(const Dataset& dataset, std::size_t batch_size, std::uint64_t seed, std::size_t epoch,
                   std::size_t step, SamplerConfig cfg) {
  return BatchSampler(dataset, batch_size, seed, cfg).batch(epoch, step);
}

}  // namespace w4p
