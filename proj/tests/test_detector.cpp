#include <doctest.h>

#include <algorithm>
#include <random>

#include "support/oracles.hpp"
#include "support/toy.hpp"
#include "ugsr/detector.hpp"

using namespace ugsr;

TEST_CASE("detector: 512-wide embeddings from the last encoder layer") {
  std::mt19937_64 rng(1);
  auto shape = toy::small_shape(6, 3);
  shape.embed_width = kEmbeddingDim;
  const auto d = Detector<double>::create(shape, rng);
  CHECK(d.embedding_dim() == 512);
  const Matrix<double> x = Matrix<double>::Random(7, 6);
  const auto e = embed(d, x);
  CHECK(e.cols() == 512);
  CHECK(e == embed(d, x));
  CHECK((e - oracle::naive_forward(d.encoder, x)).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((e.row(2) - embed(d, Matrix<double>(x.row(2))).row(0)).cwiseAbs().maxCoeff() < 1e-12);
  // Final layer is linear, so embeddings carry both signs.
  CHECK((e.array() < 0).any());

  const auto [e2, p] = embed_and_predict(d, x);
  CHECK(e2 == e);
  CHECK((p - predict(d, x)).cwiseAbs().maxCoeff() == 0);
  CHECK_THROWS_AS(embed(d, Matrix<double>::Random(2, 5)), ConfigError);
}

TEST_CASE("detector: probabilities in [0, 1]; zero classifier gives 0.5") {
  std::mt19937_64 rng(2);
  auto d = Detector<double>::create(toy::small_shape(6, 3), rng);
  const Matrix<double> x = Matrix<double>::Random(40, 6) * 50;
  const auto p = predict(d, x);
  CHECK((p.array() >= 0).all());
  CHECK((p.array() <= 1).all());
  for (auto& l : d.classifier.layers()) {
    l.weight.setZero();
    l.bias.setZero();
  }
  CHECK((predict(d, x).array() == 0.5).all());
}

TEST_CASE("detector_loss: lambda3 = 0 leaves only the contrastive term") {
  std::mt19937_64 rng(3);
  auto d = Detector<double>::create(toy::small_shape(6, 3), rng);
  const auto data = toy::separable(12, 6, 3, 3);
  const Matrix<double> x = data.x.cast<double>();
  const Vector<double> w = inverse_frequency_weights<double>(data.y_bin);
  LossWeights lw;
  lw.lambda3 = 0;
  lw.temperature = 0.5;
  const auto l = detector_loss(d, x, data.y_bin, w, lw);
  CHECK(l.total == doctest::Approx(l.first));
  for (const auto& g : d.classifier.grads()) {
    CHECK(g.weight.cwiseAbs().maxCoeff() == 0);
    CHECK(g.bias.cwiseAbs().maxCoeff() == 0);
  }
  const auto enc = d.encoder.grads();
  auto copy = d.encoder;
  const auto pass = forward(copy, x);
  backward(copy, pass, supcon<double>(pass.output(), data.y_bin, 0.5).grad);
  for (std::size_t i = 0; i < enc.size(); ++i)
    CHECK((enc[i].weight - copy.grads()[i].weight).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("train_detector: separable toy data") {
  std::vector<double> acc, drop;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto data = toy::separable(200, 6, 3, seed);
    std::mt19937_64 rng(seed);
    auto d = Detector<float>::create(toy::small_shape(6, 3), rng);
    const auto log = train_detector(d, data, inverse_frequency_weights<float>(data.y_bin), toy::adam(15), rng);
    CHECK(log.size() == 15);
    drop.push_back(log.front().total - log.back().total);
    const auto p = predict(d, data.x);
    int right = 0;
    for (Index i = 0; i < p.size(); ++i) right += (p(i) >= 0.5f ? 1 : 0) == data.y_bin[std::size_t(i)];
    acc.push_back(double(right) / double(p.size()));
  }
  std::sort(acc.begin(), acc.end());
  std::sort(drop.begin(), drop.end());
  CHECK(acc[2] > 0.95);
  CHECK(drop[2] > 0);
}

TEST_CASE("train_detector: contract errors") {
  std::mt19937_64 rng(4);
  auto d = Detector<float>::create(toy::small_shape(6, 3), rng);
  CHECK_THROWS_AS(train_detector(d, LabeledBatch<float>{}, Vector<float>{}, toy::adam(1), rng), ContractError);
  const auto data = toy::separable(10, 6, 3, 4);
  CHECK_THROWS_AS(train_detector(d, data, Vector<float>(Vector<float>::Ones(3)), toy::adam(1), rng), ConfigError);
}

TEST_CASE("inverse-frequency weighted BCE ignores duplicated benign rows") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  std::vector<int> y;
  for (int i = 0; i < 30; ++i) y.push_back(i % 4 == 0);
  Vector<double> p(30);
  for (Index i = 0; i < 30; ++i) p(i) = u(rng);

  std::vector<int> y2 = y;
  std::vector<double> p2(p.data(), p.data() + p.size());
  for (std::size_t i = 0; i < y.size(); ++i)
    if (y[i] == 0) {
      y2.push_back(0);
      p2.push_back(p(Index(i)));
    }
  const Vector<double> pp = Eigen::Map<const Vector<double>>(p2.data(), Index(p2.size()));
  const double a = weighted_bce<double>(p, as_vector<double>(y), inverse_frequency_weights<double>(y)).value;
  const double b = weighted_bce<double>(pp, as_vector<double>(y2), inverse_frequency_weights<double>(y2)).value;
  CHECK(std::abs(a - b) < 1e-6);
}
