#include "codo/contrastive.hpp"

#include <cmath>
#include <deque>
#include <vector>

#include "codo/rng.hpp"
#include "doctest.h"

using codo::Rng;
using codo::Tensor;
namespace con = codo::contrastive;
namespace nn = codo::nn;

namespace {

Tensor unit_vec(int dim, Rng& rng) {
  Tensor t({dim});
  double norm = 0.0;
  while (norm < 1e-6) {
    for (auto& v : t.data) v = rng.normal();
    norm = t.norm2();
  }
  t.scale_(1.0 / norm);
  return t;
}

Tensor basis(int dim, int axis) {
  Tensor t({dim});
  t(axis) = 1.0;
  return t;
}

con::LevelSnapshots empty_snapshots() { return {}; }

}  // namespace

TEST_CASE("queue keeps the last capacity entries in order") {
  con::NegativeQueue q(4, 2);
  CHECK(q.size() == 0);
  std::vector<Tensor> batch;
  for (int i = 0; i < 6; ++i) {
    Tensor v({2});
    const double angle = 0.3 * i;
    v.data = {std::cos(angle), std::sin(angle)};
    batch.push_back(v);
  }
  q.enqueue(batch);
  CHECK(q.size() == 4);
  const auto snap = q.snapshot();
  REQUIRE(snap.size() == 8);
  for (int i = 0; i < 4; ++i) {
    const double angle = 0.3 * (i + 2);  // entries 2..5 survive
    CHECK(snap[2 * i] == doctest::Approx(std::cos(angle)));
    CHECK(snap[2 * i + 1] == doctest::Approx(std::sin(angle)));
  }

  const auto hash_before = q.content_hash();
  q.enqueue({});
  CHECK(q.content_hash() == hash_before);
}

TEST_CASE("queue rejects bad entries and bad shapes") {
  con::NegativeQueue q(4, 3);
  Tensor long_vec({3});
  long_vec.data = {1.1, 0.0, 0.0};
  CHECK_THROWS_AS(q.enqueue({long_vec}), std::invalid_argument);
  Tensor wrong_dim({2});
  wrong_dim.data = {1.0, 0.0};
  CHECK_THROWS_AS(q.enqueue({wrong_dim}), std::invalid_argument);
  CHECK(q.size() == 0);
  CHECK_THROWS_AS(con::NegativeQueue(0, 3), std::invalid_argument);

  // a batch with one bad entry must not be partially applied
  Rng rng(1);
  Tensor good = unit_vec(3, rng);
  CHECK_THROWS_AS(q.enqueue({good, long_vec}), std::invalid_argument);
  CHECK(q.size() == 0);
}

TEST_CASE("queue matches a list-based FIFO oracle over randomized sequences") {
  Rng rng(2);
  for (int seq = 0; seq < 1000; ++seq) {
    const int capacity = 1 + static_cast<int>(rng.uniform_int(32));
    const int dim = 2 + static_cast<int>(rng.uniform_int(6));
    con::NegativeQueue q(capacity, dim);
    std::deque<std::vector<double>> oracle;
    const int ops = 1 + static_cast<int>(rng.uniform_int(10));
    for (int op = 0; op < ops; ++op) {
      const int batch = static_cast<int>(rng.uniform_int(7));
      std::vector<Tensor> vs;
      for (int b = 0; b < batch; ++b) {
        vs.push_back(unit_vec(dim, rng));
        oracle.push_back(vs.back().data);
        if (static_cast<int>(oracle.size()) > capacity) oracle.pop_front();
      }
      q.enqueue(vs);
      REQUIRE(q.size() == static_cast<int>(oracle.size()));
      const auto snap = q.snapshot();
      for (std::size_t i = 0; i < oracle.size(); ++i)
        for (int d = 0; d < dim; ++d)
          REQUIRE(snap[i * static_cast<std::size_t>(dim) +
                       static_cast<std::size_t>(d)] == oracle[i][static_cast<std::size_t>(d)]);
    }
  }
}

TEST_CASE("content hash tracks queue contents") {
  Rng rng(3);
  con::NegativeQueue a(8, 4), b(8, 4);
  const Tensor v = unit_vec(4, rng);
  a.enqueue({v});
  CHECK(a.content_hash() != b.content_hash());
  b.enqueue({v});
  CHECK(a.content_hash() == b.content_hash());
}

TEST_CASE("info_nce closed forms") {
  const int d = 8;
  const Tensor q = basis(d, 0), k = basis(d, 1);

  SUBCASE("empty queue gives zero") {
    con::NegativeQueue queue(16, d);
    CHECK(con::info_nce_value(q, k, queue, 0.2) == doctest::Approx(0.0));
  }
  SUBCASE("uniform logits give ln(K+1)") {
    for (const int kn : {3, 4095}) {
      con::NegativeQueue queue(kn, d);
      std::vector<Tensor> batch(static_cast<std::size_t>(kn), basis(d, 2));
      queue.enqueue(batch);
      CHECK(con::info_nce_value(q, k, queue, 0.2) ==
            doctest::Approx(std::log(kn + 1.0)).epsilon(1e-10));
    }
  }
  SUBCASE("frozen two-negative softmax value") {
    Tensor q2({2}), k2({2});
    q2.data = {1.0, 0.0};
    k2.data = {0.5, std::sqrt(1.0 - 0.25)};
    con::NegativeQueue queue(4, 2);
    Tensor n1({2}), n2({2});
    n1.data = {0.1, std::sqrt(1.0 - 0.01)};
    n2.data = {-0.3, std::sqrt(1.0 - 0.09)};
    queue.enqueue({n1, n2});
    CHECK(con::info_nce_value(q2, k2, queue, 0.2) ==
          doctest::Approx(0.14293162849989968).epsilon(1e-10));
  }
  SUBCASE("dimension mismatch raises") {
    const Tensor k_bad = basis(4, 0);
    con::NegativeQueue queue(4, d);
    CHECK_THROWS_AS(con::info_nce_value(q, k_bad, queue, 0.2),
                    std::invalid_argument);
    CHECK_THROWS_AS(con::info_nce_value(q, k, queue, 0.0), std::invalid_argument);
  }
}

TEST_CASE("info_nce is non-negative and rewards a closer positive") {
  Rng rng(4);
  const int d = 16;
  con::NegativeQueue queue(64, d);
  std::vector<Tensor> negs;
  for (int i = 0; i < 64; ++i) negs.push_back(unit_vec(d, rng));
  queue.enqueue(negs);

  const Tensor q = basis(d, 0);
  double prev = 1e300;
  for (const double dot : {-0.5, 0.0, 0.3, 0.7, 0.95}) {
    Tensor k({d});
    k(0) = dot;
    k(1) = std::sqrt(1.0 - dot * dot);
    const double loss = con::info_nce_value(q, k, queue, 0.2);
    CHECK(loss >= 0.0);
    CHECK(loss < prev);
    prev = loss;
  }
}

TEST_CASE("hierarchical loss composes per-level terms") {
  Rng rng(5);
  const int d = 8;
  con::LevelVars q;
  con::LevelEmbeddings k;
  con::LevelSnapshots snaps;
  std::array<con::NegativeQueue, 4> queues{
      con::NegativeQueue(8, d), con::NegativeQueue(8, d),
      con::NegativeQueue(8, d), con::NegativeQueue(8, d)};
  for (int l = 0; l < 4; ++l) {
    q[l] = nn::constant(unit_vec(d, rng));
    k[l] = unit_vec(d, rng);
    std::vector<Tensor> negs;
    for (int i = 0; i < 5; ++i) negs.push_back(unit_vec(d, rng));
    queues[l].enqueue(negs);
  }
  snaps = con::snapshot_all(queues);

  con::LossConfig cfg;
  SUBCASE("degenerate weights select one level") {
    cfg.level_weights = {1.0, 0.0, 0.0, 0.0};
    const double expect =
        con::info_nce_value(q[0]->value, k[0], queues[0], cfg.temperature);
    CHECK(con::hierarchical_loss(q, k, snaps, cfg)->value(0) ==
          doctest::Approx(expect).epsilon(1e-12));
  }
  SUBCASE("uniform weights average the levels") {
    double expect = 0.0;
    for (int l = 0; l < 4; ++l)
      expect += 0.25 * con::info_nce_value(q[l]->value, k[l], queues[l],
                                           cfg.temperature);
    CHECK(con::hierarchical_loss(q, k, snaps, cfg)->value(0) ==
          doctest::Approx(expect).epsilon(1e-6));
  }
  SUBCASE("identical per-level losses reproduce the common value") {
    for (int l = 1; l < 4; ++l) {
      q[l] = q[0];
      k[l] = k[0];
      snaps[l] = snaps[0];
    }
    const double single =
        con::info_nce_value(q[0]->value, k[0], snaps[0], cfg.temperature);
    CHECK(con::hierarchical_loss(q, k, snaps, cfg)->value(0) ==
          doctest::Approx(single).epsilon(1e-9));
  }
  SUBCASE("config validation") {
    cfg.temperature = -1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.level_weights = {0.5, 0.5, 0.5, 0.5};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.level_weights = {1.5, -0.5, 0.0, 0.0};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
}

TEST_CASE("multi-view loss sums hierarchical terms over keys") {
  Rng rng(6);
  const int d = 8;
  con::LevelVars q;
  con::LevelSnapshots snaps;
  for (int l = 0; l < 4; ++l) {
    q[l] = nn::constant(unit_vec(d, rng));
    for (int i = 0; i < 6; ++i) {
      const Tensor n = unit_vec(d, rng);
      snaps[l].insert(snaps[l].end(), n.data.begin(), n.data.end());
    }
  }
  con::LossConfig cfg;
  auto make_key = [&]() {
    con::LevelEmbeddings k;
    for (int l = 0; l < 4; ++l) k[l] = unit_vec(d, rng);
    return k;
  };

  const con::LevelEmbeddings k1 = make_key(), k2 = make_key(), k3 = make_key();
  const double h1 = con::hierarchical_loss(q, k1, snaps, cfg)->value(0);
  const double h2 = con::hierarchical_loss(q, k2, snaps, cfg)->value(0);
  const double h3 = con::hierarchical_loss(q, k3, snaps, cfg)->value(0);

  CHECK(con::multi_view_loss(q, {k1}, snaps, cfg)->value(0) ==
        doctest::Approx(h1).epsilon(1e-12));
  CHECK(con::multi_view_loss(q, {k1, k1, k1}, snaps, cfg)->value(0) ==
        doctest::Approx(3.0 * h1).epsilon(1e-6));
  const double sum = con::multi_view_loss(q, {k1, k2, k3}, snaps, cfg)->value(0);
  CHECK(sum == doctest::Approx(h1 + h2 + h3).epsilon(1e-6));
  const double permuted =
      con::multi_view_loss(q, {k3, k1, k2}, snaps, cfg)->value(0);
  CHECK(std::abs(sum - permuted) < 1e-9);
  CHECK_THROWS_AS(con::multi_view_loss(q, {}, snaps, cfg), std::invalid_argument);
}

TEST_CASE("hierarchical loss gradient matches finite differences") {
  Rng rng(7);
  const int d = 8;
  con::LevelVars q;
  std::array<Tensor, 4> q_vals;
  con::LevelEmbeddings k;
  con::LevelSnapshots snaps = empty_snapshots();
  for (int l = 0; l < 4; ++l) {
    q_vals[l] = unit_vec(d, rng);
    k[l] = unit_vec(d, rng);
    for (int i = 0; i < 4; ++i) {
      const Tensor n = unit_vec(d, rng);
      snaps[l].insert(snaps[l].end(), n.data.begin(), n.data.end());
    }
  }
  con::LossConfig cfg;

  auto build = [&]() {
    for (int l = 0; l < 4; ++l) q[l] = nn::leaf(q_vals[l], true);
    return con::hierarchical_loss(q, k, snaps, cfg);
  };
  nn::GradSink sink;
  auto root = build();
  nn::backward(root, sink);
  std::array<Tensor, 4> analytic_grads;
  for (int l = 0; l < 4; ++l) analytic_grads[l] = q[l]->grad;

  for (int l = 0; l < 4; ++l)
    for (int i = 0; i < d; ++i) {
      double& x = q_vals[l].data[static_cast<std::size_t>(i)];
      const double orig = x, h = 1e-6;
      nn::NoGradGuard off;
      x = orig + h;
      const double fp = build()->value(0);
      x = orig - h;
      const double fm = build()->value(0);
      x = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double analytic = analytic_grads[l](i);
      CHECK(std::abs(numeric - analytic) /
                std::max({std::abs(numeric), std::abs(analytic), 1e-8}) <
            1e-4);
    }
}
