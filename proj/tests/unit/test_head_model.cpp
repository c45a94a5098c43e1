#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "edgecl/byte_io.hpp"
#include "edgecl/head_model.hpp"
#include "grad_oracle.hpp"

using namespace edgecl;

namespace {

Batch blobs(std::uint64_t seed, std::size_t per_class = 50) {
  Rng rng(seed);
  Batch b;
  b.features.resize(static_cast<Eigen::Index>(2 * per_class), 2);
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    const ClassIndex y = i % 2;
    const double centre = y == 0 ? -2.0 : 2.0;
    b.features(static_cast<Eigen::Index>(i), 0) = static_cast<float>(centre + 0.3 * rng.normal());
    b.features(static_cast<Eigen::Index>(i), 1) = static_cast<float>(centre + 0.3 * rng.normal());
    b.labels.push_back(y);
  }
  return b;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("edgecl_head_" + name);
}

}  // namespace

TEST_CASE("init_head shapes and determinism") {
  auto p = init_head(1280, 128, 50, 1);
  CHECK(p.w1.rows() == 128);
  CHECK(p.w1.cols() == 1280);
  CHECK(p.b1.size() == 128);
  CHECK(p.w2.rows() == 50);
  CHECK(p.w2.cols() == 128);
  CHECK(p.b2.size() == 50);
  CHECK(p.b1.isZero());
  CHECK(p.b2.isZero());
  const float r1 = std::sqrt(6.0f / 1280.0f);
  CHECK(p.w1.cwiseAbs().maxCoeff() <= r1);

  CHECK(init_head(4, 2, 2, 7) == init_head(4, 2, 2, 7));
  CHECK_FALSE(init_head(4, 2, 2, 7) == init_head(4, 2, 2, 8));
  CHECK_THROWS_AS(init_head(0, 2, 2, 1), ArgumentError);
}

TEST_CASE("forward") {
  auto zero = Head::zeros(3, 4, 5);
  auto p = forward(zero, VectorF::Zero(3));
  for (int i = 0; i < 5; ++i) CHECK(p[i] == doctest::Approx(0.2));

  // W1 = W2 = I, x = [1, -2]: hidden relu([1, -2]) = [1, 0], logits [1, 0].
  auto h = Head::zeros(2, 2, 2);
  h.w1.setIdentity();
  h.w2.setIdentity();
  VectorF x(2);
  x << 1, -2;
  const double e = std::exp(1.0);
  p = forward(h, x);
  CHECK(p[0] == doctest::Approx(e / (e + 1)).epsilon(1e-6));
  CHECK(p[1] == doctest::Approx(1 / (e + 1)).epsilon(1e-6));

  CHECK_THROWS_AS(forward(h, VectorF::Zero(3)), DimensionError);

  auto r = init_head(6, 8, 4, 3);
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    VectorF v(6);
    for (Eigen::Index i = 0; i < 6; ++i) v[i] = static_cast<float>(rng.normal());
    MatrixF row = v.transpose();
    CHECK(argmax(forward(r, v)) == argmax(logits(r, row).row(0).transpose()));
    CHECK(std::abs(forward(r, v).cast<double>().sum() - 1.0) < 1e-6);
  }
}

TEST_CASE("loss_and_grads") {
  SUBCASE("uniform output gives ln C") {
    auto zero = Head::zeros(3, 4, 5);
    Batch b;
    b.features = MatrixF::Ones(1, 3);
    b.labels = {2};
    CHECK(loss_and_grads(zero, b).loss == doctest::Approx(std::log(5.0)));
  }

  SUBCASE("finite-difference oracle") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) CHECK(testing::max_relative_grad_error(seed) < 1e-4);
  }

  SUBCASE("duplicated sample gives the same gradients") {
    auto p = init_head(5, 6, 3, 4);
    Batch one;
    one.features = MatrixF::Random(1, 5);
    one.labels = {1};
    Batch two = one;
    two.append(one);
    auto g1 = loss_and_grads(p, one);
    auto g2 = loss_and_grads(p, two);
    CHECK(g1.loss == doctest::Approx(g2.loss));
    CHECK(g1.grads.w1.isApprox(g2.grads.w1, 1e-6f));
    CHECK(g1.grads.w2.isApprox(g2.grads.w2, 1e-6f));
    CHECK(g1.grads.b1.isApprox(g2.grads.b1, 1e-6f));
    CHECK(g1.grads.b2.isApprox(g2.grads.b2, 1e-6f));
  }

  auto p = init_head(2, 2, 2, 1);
  CHECK_THROWS_AS(loss_and_grads(p, Batch::with_dim(2)), ArgumentError);
  Batch bad;
  bad.features = MatrixF::Zero(1, 2);
  bad.labels = {2};
  CHECK_THROWS_AS(loss_and_grads(p, bad), IndexError);
}

TEST_CASE("sgd_step") {
  auto p = init_head(3, 4, 2, 5);
  CHECK(sgd_step(p, Head::zeros(3, 4, 2), 0.1) == p);
  auto zeroed = sgd_step(p, p, 1.0);
  CHECK(zeroed.w1.isZero());
  CHECK(zeroed.w2.isZero());

  Head g = Head::zeros(3, 4, 2);
  g.w1.setConstant(0.5f);
  g.b2.setConstant(-0.25f);
  auto half_twice = sgd_step(sgd_step(p, g, 0.05), g, 0.05);
  auto once = sgd_step(p, g, 0.1);
  CHECK(half_twice.w1.isApprox(once.w1, 1e-6f));
  CHECK(half_twice.b2.isApprox(once.b2, 1e-6f));

  Head nan = Head::zeros(3, 4, 2);
  nan.b1[0] = std::nanf("");
  Head before = p;
  CHECK_THROWS_AS(apply_sgd(p, nan, 0.1), NumericError);
  CHECK(p == before);
  CHECK_THROWS_AS(sgd_step(p, Head::zeros(3, 5, 2), 0.1), DimensionError);
}

TEST_CASE("train_epochs") {
  const Batch data = blobs(21);
  TrainConfig cfg;
  cfg.epochs_per_batch = 50;

  SUBCASE("separable blobs reach 100% training accuracy") {
    auto p = init_head(2, 128, 2, 1);
    Rng rng(1);
    auto curve = train_epochs(p, data, cfg, rng);
    CHECK(curve.size() == 50);
    CHECK(curve.back() < curve.front());
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i)
      correct += predict(p, VectorF(data.features.row(static_cast<Eigen::Index>(i)).transpose())).label == data.labels[i];
    CHECK(correct == data.size());
  }

  SUBCASE("zero epochs leaves params unchanged") {
    auto p = init_head(2, 8, 2, 1);
    const auto before = p;
    TrainConfig none = cfg;
    none.epochs_per_batch = 0;
    Rng rng(1);
    CHECK(train_epochs(p, data, none, rng).empty());
    CHECK(p == before);
  }

  SUBCASE("same seed gives identical curves") {
    auto p1 = init_head(2, 16, 2, 3), p2 = p1;
    Rng r1(9), r2(9);
    CHECK(train_epochs(p1, data, cfg, r1) == train_epochs(p2, data, cfg, r2));
    CHECK(p1 == p2);
  }

  SUBCASE("loss decreases for every seed at lr 0.01") {
    cfg.learning_rate = 0.01;
    for (std::uint64_t seed = 1; seed <= 8; ++seed) {
      auto p = init_head(2, 16, 2, seed);
      Rng rng(seed);
      const Batch small = blobs(seed, 8);
      const double initial = loss_and_grads(p, small).loss;
      auto curve = train_epochs(p, small, cfg, rng);
      CHECK(curve.back() < initial);
    }
  }

  auto p = init_head(2, 4, 2, 1);
  Rng rng(1);
  CHECK_THROWS_AS(train_epochs(p, Batch::with_dim(2), cfg, rng), ArgumentError);
}

TEST_CASE("predict") {
  auto zero = Head::zeros(3, 2, 4);
  auto pr = predict(zero, VectorF::Zero(3));
  CHECK(pr.label == 0);

  auto p = init_head(3, 5, 4, 2);
  VectorF x(3);
  x << 0.3f, -1.f, 2.f;
  CHECK(predict(p, x).probs == forward(p, x));
  CHECK_THROWS_AS(predict(p, VectorF::Zero(2)), DimensionError);

  SUBCASE("adding a constant to every logit keeps the label") {
    auto q = p;
    q.b2.array() += 100.0f;
    CHECK(predict(q, x).label == predict(p, x).label);
  }
}

TEST_CASE("HDP1 round trip and corruption") {
  auto p = init_head(7, 5, 3, 11);
  p.b1.setConstant(0.125f);
  const auto path = temp_path("roundtrip.hdp");
  save_head(p, path);
  const auto first = io::read_file(path);
  const Head loaded = load_head(path);
  CHECK(loaded == p);
  save_head(loaded, path);
  CHECK(io::read_file(path) == first);

  CHECK(first.size() == 16 + 4 * (5 * 7 + 5 + 3 * 5 + 3));
  CHECK(std::string(first.begin(), first.begin() + 4) == "HDP1");

  SUBCASE("truncated") {
    auto cut = first;
    cut.resize(cut.size() - 3);
    io::write_file(path, cut);
    CHECK_THROWS_AS(load_head(path), FormatError);
  }
  SUBCASE("header disagrees with payload") {
    auto wrong = first;
    wrong[4] = 8;  // D = 8
    io::write_file(path, wrong);
    CHECK_THROWS_AS(load_head(path), FormatError);
    wrong[4] = 6;  // D = 6 leaves trailing bytes
    io::write_file(path, wrong);
    CHECK_THROWS_AS(load_head(path), FormatError);
  }
  SUBCASE("bad magic") {
    auto bad = first;
    bad[0] = 'X';
    io::write_file(path, bad);
    try {
      load_head(path);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(e.offset() == 0);
    }
  }
  std::filesystem::remove(path);
}
