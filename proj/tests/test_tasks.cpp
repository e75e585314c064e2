#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "difftune/tasks.hpp"

using namespace difftune;

TEST_CASE("default universe geometry") {
  const TaskUniverse u = TaskUniverse::make_default(10, 8, 8);
  REQUIRE(u.objects.size() == 10);
  CHECK(u.sample_dim() == 4);
  CHECK(u.context_dim() == 2 * 10 + kNumRelations + 8 + 8);
  for (const ObjectClass& o : u.objects)
    CHECK(std::hypot(o.cx, o.cy) == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(u.objects[0].cx == doctest::Approx(1.5));
  CHECK(u.objects[0].cy == doctest::Approx(0.0));
}

TEST_CASE("detector confidence at one kernel width is exp(-1/2)") {
  const ObjectClass o{0, 1.0, 2.0, 0.3};
  // Slot 0 far away, slot 1 exactly one width off in x: max picks slot 1.
  const Tensor x0 = Tensor::vec({-5.0, -5.0, 1.3, 2.0});
  CHECK(detect(o, x0) == doctest::Approx(0.6065306597126334).epsilon(1e-12));
  // Dead center scores 1.
  CHECK(detect(o, Tensor::vec({1.0, 2.0, -5.0, -5.0})) == doctest::Approx(1.0));
}

TEST_CASE("attribute classifier: nearest center, ties to the lower index") {
  const AttributeSpec spec;
  CHECK(classify_attribute(Tensor::vec({-1.5, 0, 0, 0}), spec) == 0);
  CHECK(classify_attribute(Tensor::vec({1.4, 0, 0, 0}), spec) == 3);
  // -1.0 is equidistant from centers -1.5 and -0.5.
  CHECK(classify_attribute(Tensor::vec({-1.0, 0, 0, 0}), spec) == 0);
  CHECK(classify_attribute(Tensor::vec({-0.99, 0, 0, 0}), spec) == 1);
  CHECK(classify_attribute(Tensor::vec({0.0, 0, 0, 0}), spec) == 1);
}

TEST_CASE("portrait bias ratio matches the binomial oracle") {
  const TaskUniverse u = TaskUniverse::make_default();
  PretrainSpec spec;
  spec.n_composition = 0;
  spec.n_preference = 0;
  spec.n_portrait = 4000;
  Rng rng(31);
  const auto data = gen_pretrain_dataset(u, spec, rng);
  REQUIRE(data.size() == 4000);
  int bin0 = 0;
  std::vector<int> rest_hist(u.attr.n_bins(), 0);
  for (const SceneSample& s : data) {
    REQUIRE(s.attr_bin >= 0);
    REQUIRE(s.attr_bin < u.attr.n_bins());
    if (s.attr_bin == 0) ++bin0;
    rest_hist[s.attr_bin] += 1;
  }
  const double p = 0.85, n = 4000;
  const double se = std::sqrt(p * (1 - p) / n);
  CHECK(std::abs(bin0 / n - p) < 3 * se);
  // Non-zero bins are roughly uniform among themselves.
  for (int b = 1; b < u.attr.n_bins(); ++b)
    CHECK(std::abs(rest_hist[b] / n - 0.05) < 0.02);
}

TEST_CASE("dataset generation validates parameters and jitters means") {
  const TaskUniverse u = TaskUniverse::make_default();
  PretrainSpec bad;
  bad.bias_ratio = 1.0;
  Rng rng(1);
  CHECK_THROWS_AS(gen_pretrain_dataset(u, bad, rng), ContractError);

  PretrainSpec spec;
  spec.n_composition = 500;
  spec.n_portrait = 0;
  spec.n_preference = 0;
  spec.jitter = 0.1;
  const auto data = gen_pretrain_dataset(u, spec, rng);
  double sq = 0.0;
  for (const SceneSample& s : data) {
    CHECK(s.ctx.object_a != s.ctx.object_b);
    const Tensor mean = u.composition_mean(s.ctx.object_a, s.ctx.object_b);
    for (int d = 0; d < 4; ++d) {
      const double r = s.x0.data[d] - mean.data[d];
      sq += r * r;
    }
  }
  const double sample_sd = std::sqrt(sq / (500.0 * 4.0));
  CHECK(sample_sd == doctest::Approx(0.1).epsilon(0.15));
}

TEST_CASE("uniformity of prompt draws (chi-square at fixed seed)") {
  Rng rng(77);
  const int n = 10000, k = 10;
  std::vector<int> hist(k, 0);
  for (int i = 0; i < n; ++i) hist[rng.below(k)] += 1;
  double chi2 = 0.0;
  const double expect = static_cast<double>(n) / k;
  for (int b = 0; b < k; ++b) {
    const double d = hist[b] - expect;
    chi2 += d * d / expect;
  }
  CHECK(chi2 < 27.88);  // 99.9th percentile of chi-square with 9 dof
}

TEST_CASE("object split: disjoint, sorted, deterministic, clamped") {
  Rng rng(13);
  auto [seen, unseen] = split_objects(10, 0.8, rng);
  CHECK(seen.size() == 8);
  CHECK(unseen.size() == 2);
  CHECK(std::is_sorted(seen.begin(), seen.end()));
  CHECK(std::is_sorted(unseen.begin(), unseen.end()));
  std::set<int> all(seen.begin(), seen.end());
  all.insert(unseen.begin(), unseen.end());
  CHECK(all.size() == 10);
  CHECK(*all.begin() == 0);
  CHECK(*all.rbegin() == 9);

  Rng rng2(13);
  auto [seen2, unseen2] = split_objects(10, 0.8, rng2);
  CHECK(seen == seen2);
  CHECK(unseen == unseen2);

  Rng rng3(13);
  auto [lo_seen, lo_unseen] = split_objects(10, 0.01, rng3);
  CHECK(lo_seen.size() == 1);  // clamped to at least one per side
  Rng rng4(13);
  auto [hi_seen, hi_unseen] = split_objects(10, 0.999, rng4);
  CHECK(hi_unseen.size() == 1);
  CHECK_THROWS_AS(split_objects(1, 0.5, rng4), ContractError);
}

TEST_CASE("prompt sampling draws distinct objects from the pool") {
  TaskSpec spec;
  spec.kind = TaskKind::composition;
  spec.object_pool = {2, 5, 7};
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const Context c = make_prompt(spec, rng);
    CHECK(c.object_a != c.object_b);
    CHECK(std::count(spec.object_pool.begin(), spec.object_pool.end(),
                     c.object_a) == 1);
    CHECK(std::count(spec.object_pool.begin(), spec.object_pool.end(),
                     c.object_b) == 1);
    CHECK(c.relation >= 0);
    CHECK(c.relation < kNumRelations);
  }
  TaskSpec tiny;
  tiny.kind = TaskKind::composition;
  tiny.object_pool = {4};
  CHECK_THROWS_AS(make_prompt(tiny, rng), ContractError);
}

TEST_CASE("embeddings are segment-local one-hots; zero is the null context") {
  const TaskUniverse u = TaskUniverse::make_default(10, 8, 8);
  Context comp;
  comp.kind = TaskKind::composition;
  comp.object_a = 3;
  comp.object_b = 7;
  comp.relation = 2;
  const Tensor ce = u.embed(comp);
  REQUIRE(ce.size() == u.context_dim());
  CHECK(ce.data[3] == 1.0);
  CHECK(ce.data[10 + 7] == 1.0);
  CHECK(ce.data[20 + 2] == 1.0);
  double sum = 0.0;
  for (double x : ce.data) sum += x;
  CHECK(sum == 3.0);

  Context port;
  port.kind = TaskKind::portrait;
  port.style = 4;
  const Tensor pe = u.embed(port);
  CHECK(pe.data[25 + 4] == 1.0);

  Context pref;
  pref.kind = TaskKind::preference;
  pref.prompt = 6;
  const Tensor fe = u.embed(pref);
  CHECK(fe.data[25 + 8 + 6] == 1.0);

  CHECK(comp.key() != port.key());
  CHECK(port.key() != pref.key());
  Context port2 = port;
  port2.style = 5;
  CHECK(port.key() != port2.key());
  CHECK(port.key() == Context(port).key());
}
