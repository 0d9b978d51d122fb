#pragma once

// Cheap comparison attributions: leave-one-out, RISE, vanilla gradients,
// final-layer class-token attention, and random rankings.

#include <cstddef>
#include <vector>

#include "shapkit/attribution.hpp"
#include "shapkit/game.hpp"
#include "shapkit/image.hpp"
#include "shapkit/rng.hpp"
#include "shapkit/subset.hpp"
#include "shapkit/vit.hpp"

namespace shapkit {

// phi_i = v(1) - v(1 - e_i).
Attribution leave_one_out(const Game& game, std::size_t y);

// phi_i = mean of v(s) over sampled uniform-cardinality subsets containing
// i. Patches never sampled score 0 and are listed in `undefined`.
Attribution rise(const Game& game, std::size_t y, std::size_t samples, Rng& rng,
                 std::vector<std::size_t>* undefined = nullptr);

// Per patch: sum over its embedding entries of |d prob_y / d embedding|,
// where the embedding is the projected patch before positional terms.
Attribution vanilla_gradient(const ViTWeights& model, const Image& image, std::size_t y);

// Gradient of prob_y with respect to the [d x h] patch embeddings.
std::vector<double> probability_gradient(const ViTWeights& model, const Image& image,
                                         std::size_t y);

// Final-layer attention from the class-token query to each patch key,
// summed over heads. Requires class-token readout.
Attribution attention_last(const ViTWeights& model, const Image& image);
Attribution attention_last(const ViTWeights& model, const Image& image, const Subset& s);

// `repeats` random permutations of 0..d-1 used as scores.
std::vector<Attribution> random_ranking(std::size_t d, Rng& rng, std::size_t repeats = 10);

}  // namespace shapkit
