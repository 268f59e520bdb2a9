#pragma once

// Synthetic knowledge graphs sampled from a hidden rotation model. Used as a
// recovery oracle for the trainer: the generator never calls into kglink.

#include <algorithm>
#include <complex>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "weakcap/corpusio.hpp"
#include "weakcap/errors.hpp"
#include "weakcap/rng.hpp"

namespace weakcap {

struct PlantedKgSpec {
  int entities = 30;
  int relations = 5;
  int triplets = 200;
  int positions = 15;  // hidden ring size; entities share positions in groups
  std::uint64_t seed = 2024;
};

struct PlantedKg {
  std::vector<Triplet> all;
  std::vector<Triplet> train;
  std::vector<Triplet> test;
  std::vector<int> position;        // hidden ring position per entity
  std::vector<int> relation_shift;  // hidden rotation per relation, in ring steps
};

inline std::string planted_entity(int i) {
  return std::string("e") + (i < 10 ? "0" : "") + std::to_string(i);
}

/// Entities sit at the roots of unity exp(2 pi i p / positions); relation r
/// rotates by a hidden shift. Every (h, r, t) with p(t) = p(h) + shift(r) has
/// hidden score exactly zero. The requested number of those is sampled.
inline PlantedKg make_planted_kg(const PlantedKgSpec& spec, double train_fraction = 0.8) {
  if (spec.positions < 2 || spec.relations >= spec.positions) {
    throw ArgumentError("planted KG: need more ring positions than relations");
  }
  Rng rng(derive_seed(spec.seed, 0x504C414E54ULL));
  PlantedKg kg;
  for (int e = 0; e < spec.entities; ++e) kg.position.push_back(e % spec.positions);
  rng.shuffle(kg.position);
  std::vector<int> shifts;
  for (int k = 1; k < spec.positions; ++k) shifts.push_back(k);
  rng.shuffle(shifts);
  kg.relation_shift.assign(shifts.begin(), shifts.begin() + spec.relations);

  std::vector<Triplet> truth;
  for (int h = 0; h < spec.entities; ++h) {
    for (int r = 0; r < spec.relations; ++r) {
      const int target = (kg.position[static_cast<std::size_t>(h)] + kg.relation_shift[static_cast<std::size_t>(r)]) %
                         spec.positions;
      for (int t = 0; t < spec.entities; ++t) {
        if (t == h || kg.position[static_cast<std::size_t>(t)] != target) continue;
        truth.push_back(Triplet{Phrase::make_noun(planted_entity(h)), "r" + std::to_string(r),
                                Phrase::make_noun(planted_entity(t))});
      }
    }
  }
  if (static_cast<int>(truth.size()) < spec.triplets) {
    throw ArgumentError("planted KG: hidden model admits only " + std::to_string(truth.size()) + " triplets");
  }
  rng.shuffle(truth);
  kg.all.assign(truth.begin(), truth.begin() + spec.triplets);
  const auto n_train = static_cast<std::size_t>(train_fraction * static_cast<double>(kg.all.size()) + 0.5);
  kg.train.assign(kg.all.begin(), kg.all.begin() + static_cast<std::ptrdiff_t>(n_train));
  kg.test.assign(kg.all.begin() + static_cast<std::ptrdiff_t>(n_train), kg.all.end());
  return kg;
}

}  // namespace weakcap
