#pragma once

#include <cstdio>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "treeproj/autodiff.hpp"
#include "treeproj/rng.hpp"

namespace treeproj::detail {

using ExampleLoss = std::function<Var(Tape&, std::size_t)>;

// Dropout for one optimizer step; batch slot b draws from derive_seed(seed, b).
struct DropoutStream {
  double rate = 0.0;
  std::uint64_t seed = 0;
};

// Sum of per-example gradients divided by `normalizer`. Each example runs on
// its own tape; the reduction is in batch order, so the result does not
// depend on the thread count. Returns the summed loss.
double batch_gradients(const std::vector<Parameter*>& params, std::span<const std::size_t> batch,
                       const ExampleLoss& loss, double normalizer, std::vector<Matrix>& grads, bool parallel,
                       const DropoutStream& dropout = {});

std::vector<std::size_t> sample_batch(Rng& rng, std::size_t pool, std::size_t size);

// Opens `path` for writing or throws IoError.
std::FILE* open_for_write(const std::filesystem::path& path);

}  // namespace treeproj::detail
