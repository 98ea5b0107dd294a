#include "doctest.h"

#include <cmath>
#include <set>

#include "cs2/phantom.hpp"

using cs2::LabeledPhantom;
using cs2::PhantomSpec;

TEST_CASE("phantom with n_ggo=0 has no GGO voxels") {
  PhantomSpec spec;
  spec.seed = 3;
  spec.n_ggo_min = spec.n_ggo_max = 0;
  const auto p = cs2::generate_phantom(spec);
  for (auto l : p.truth.labels) CHECK(l != cs2::kGgo);
}

TEST_CASE("noiseless phantom hits class means exactly") {
  PhantomSpec spec;
  spec.seed = 4;
  spec.noise_std = 0.0;
  const auto p = cs2::generate_phantom(spec);
  for (std::size_t i = 0; i < p.volume.voxels.size(); ++i)
    CHECK(p.volume.voxels[i] ==
          static_cast<std::int16_t>(spec.hu_mean[p.truth.labels[i]]));
}

TEST_CASE("same seed produces bit-identical phantoms") {
  PhantomSpec spec;
  spec.seed = 5;
  const auto a = cs2::generate_phantom(spec);
  const auto b = cs2::generate_phantom(spec);
  CHECK(a.volume.voxels == b.volume.voxels);
  CHECK(a.truth.labels == b.truth.labels);
}

TEST_CASE("ggo voxels lie strictly inside lung regions") {
  for (std::uint64_t seed = 10; seed < 30; ++seed) {
    PhantomSpec spec;
    spec.seed = seed;
    spec.n_ggo_min = 2;
    spec.n_ggo_max = 4;
    const auto p = cs2::generate_phantom(spec);
    // GGO only replaces lung tissue: regenerating with no GGO must show lung
    // everywhere the labeled phantom shows GGO
    PhantomSpec bare = spec;
    bare.n_ggo_min = bare.n_ggo_max = 0;
    const auto q = cs2::generate_phantom(bare);
    const int H = p.truth.height, W = p.truth.width;
    bool any_ggo = false;
    for (int r = 0; r < H; ++r)
      for (int c = 0; c < W; ++c) {
        if (p.truth.at(0, r, c) != cs2::kGgo) continue;
        any_ggo = true;
        CHECK(q.truth.at(0, r, c) == cs2::kLung);
      }
    CHECK(any_ggo);
  }
}

TEST_CASE("oversized lungs are rejected") {
  PhantomSpec spec;
  spec.seed = 6;
  spec.lung_scale = 3.0;
  CHECK_THROWS_WITH_AS(cs2::generate_phantom(spec), doctest::Contains("lung"),
                       cs2::Error);
}

TEST_CASE("corpus generation is deterministic and diverse") {
  PhantomSpec tpl;
  const auto corpus = cs2::phantom_corpus(20, tpl, 100);
  const auto again = cs2::phantom_corpus(20, tpl, 100);
  REQUIRE(corpus.size() == 20);
  for (std::size_t i = 0; i < corpus.size(); ++i)
    CHECK(corpus[i].volume.voxels == again[i].volume.voxels);
  // pairwise voxel equality below 1%
  for (std::size_t i = 0; i < corpus.size(); ++i)
    for (std::size_t j = i + 1; j < corpus.size(); ++j) {
      std::size_t eq = 0;
      for (std::size_t k = 0; k < corpus[i].volume.voxels.size(); ++k)
        if (corpus[i].volume.voxels[k] == corpus[j].volume.voxels[k]) ++eq;
      CHECK(static_cast<double>(eq) <
            0.5 * static_cast<double>(corpus[i].volume.voxels.size()));
    }
  // disjoint seed ranges share no identical volume
  const auto other = cs2::phantom_corpus(20, tpl, 500);
  for (const auto& a : corpus)
    for (const auto& b : other) CHECK(a.volume.voxels != b.volume.voxels);
}

TEST_CASE("class-conditional sample means stay within 3*noise_std/sqrt(n)") {
  PhantomSpec tpl;
  tpl.n_slices = 6;
  const auto corpus = cs2::phantom_corpus(200, tpl, 1000);
  double sum[4] = {0, 0, 0, 0};
  double cnt[4] = {0, 0, 0, 0};
  for (const auto& p : corpus)
    for (std::size_t i = 0; i < p.volume.voxels.size(); ++i) {
      sum[p.truth.labels[i]] += p.volume.voxels[i];
      cnt[p.truth.labels[i]] += 1.0;
    }
  for (int c = 0; c < 4; ++c) {
    REQUIRE(cnt[c] > 0);
    const double mean = sum[c] / cnt[c];
    const double tol = 3.0 * tpl.noise_std / std::sqrt(cnt[c]) + 1e-9;
    CHECK(std::fabs(mean - tpl.hu_mean[static_cast<std::size_t>(c)]) <= tol);
  }
}

TEST_CASE("pairwise equality is high within one volume's noiseless twin") {
  // sanity: the extruded geometry means every slice shares its truth plane
  PhantomSpec spec;
  spec.seed = 11;
  const auto p = cs2::generate_phantom(spec);
  const std::size_t hw =
      static_cast<std::size_t>(p.truth.height) * p.truth.width;
  for (int s = 1; s < p.truth.n_slices; ++s)
    for (std::size_t i = 0; i < hw; ++i)
      CHECK(p.truth.labels[static_cast<std::size_t>(s) * hw + i] ==
            p.truth.labels[i]);
}
