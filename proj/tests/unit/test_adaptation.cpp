#include <cmath>
#include <numbers>

#include <doctest.h>

#include "patchda/adaptation.hpp"
#include "patchda/error.hpp"
#include "patchda/optim.hpp"
#include "support.hpp"

using namespace patchda;
using namespace patchda::adaptation;

namespace {

const double kLn2 = std::numbers::ln2;

// Logits whose softmax is (p, 1 - p).
Tensor two_way(std::initializer_list<double> ps) {
  std::vector<float> v;
  for (double p : ps) {
    v.push_back(static_cast<float>(std::log(p)));
    v.push_back(static_cast<float>(std::log(1 - p)));
  }
  return Tensor::from({static_cast<int>(ps.size()), 2}, v, true);
}

DomainPrediction prediction_of(const Tensor& logits) { return {logits, ops::softmax_rows(logits)}; }

}  // namespace

TEST_CASE("entropy") {
  const std::vector<double> one_hot{0, 1, 0};
  CHECK(entropy(std::span<const double>(one_hot)) == 0.0);
  for (int k : {2, 3, 4, 7}) {
    const std::vector<double> uniform(k, 1.0 / k);
    CHECK(std::abs(entropy(std::span<const double>(uniform)) - std::log(k)) < 1e-6);
  }
  const std::vector<double> half{0.5, 0.5};
  CHECK(std::abs(entropy(std::span<const double>(half)) - 0.693147) < 1e-6);
  const std::vector<double> negative{-0.1, 1.1};
  CHECK_THROWS_AS(entropy(std::span<const double>(negative)), InvalidInput);
  const std::vector<double> unnormalized{0.3, 0.3};
  CHECK_THROWS_AS(entropy(std::span<const double>(unnormalized)), InvalidInput);
  for (double p = 0.0; p <= 1.0; p += 0.05) {
    const double h = normalized_domain_entropy(p, 1 - p);
    CHECK(h >= 0.0);
    CHECK(h <= 1.0 + 1e-12);
  }
}

TEST_CASE("grl forward and backward") {
  Tensor x = test::random_tensor({2, 3}, 1);
  for (float lambda : {0.0f, 0.5f, 1.0f}) {
    const Tensor y = grl(x, lambda);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.values()[i] == x.values()[i]);
    x.zero_grad();
    ops::sum(ops::scale(y, 2.0f)).backward();
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == doctest::Approx(-2.0 * lambda));
  }
}

TEST_CASE("domain classification loss") {
  const std::vector<int> tags{0, 1, 0, 1};
  SUBCASE("uniform predictions give ln 2") {
    const auto l = domain_classification_loss(prediction_of(Tensor::zeros({4, 2})), tags);
    CHECK(l.loss.item() == doctest::Approx(kLn2));
    CHECK_FALSE(l.degenerate);
  }
  SUBCASE("confident correct predictions approach zero") {
    const auto l = domain_classification_loss(prediction_of(two_way({1 - 1e-7, 1e-7, 1 - 1e-7, 1e-7})), tags);
    CHECK(l.loss.item() < 1e-5);
  }
  SUBCASE("hand-computed batch") {
    const auto l = domain_classification_loss(prediction_of(two_way({0.9, 0.2, 0.6, 0.7})), tags);
    const double expect = -(std::log(0.9) + std::log(0.8) + std::log(0.6) + std::log(0.3)) / 4;
    CHECK(l.loss.item() == doctest::Approx(expect).epsilon(1e-5));
  }
  SUBCASE("single-domain batch is flagged") {
    const std::vector<int> same{0, 0, 0, 0};
    const auto l = domain_classification_loss(prediction_of(Tensor::zeros({4, 2})), same);
    CHECK(l.degenerate);
    CHECK(l.loss.item() == doctest::Approx(kLn2));
  }
}

TEST_CASE("frame, relation and video domain losses") {
  std::mt19937_64 rng(3);
  const std::vector<int> tags{0, 1};
  const DomainClassifier frame(8, 2, rng);
  const relation::SharedSequence z{test::random_tensor({6, 8}, 4), 2, 3};
  const auto sd = frame_domain_loss(frame, z, tags, 1.0f);
  CHECK(sd.prediction.probs.size() == 12);
  CHECK(std::isfinite(sd.loss.item()));
  CHECK_THROWS_AS(frame_domain_loss(frame, z, std::vector<int>{0}, 1.0f), InvalidInput);

  std::map<int, DomainClassifier> per_scale;
  per_scale.emplace(2, DomainClassifier(8, 2, rng));
  per_scale.emplace(3, DomainClassifier(8, 2, rng));
  relation::RelationSet rs;
  rs.clips = 2;
  rs.r[2] = test::random_tensor({2, 8}, 5);
  rs.r[3] = test::random_tensor({2, 8}, 6);
  const auto rd = relation_domain_losses(per_scale, rs, tags, 1.0f);
  CHECK(rd.loss.size() == 2);
  CHECK(rd.prediction.size() == 2);

  const DomainClassifier video(8, 2, rng);
  const auto td = video_domain_loss(video, rs.r[2], tags, 0.5f);
  CHECK(td.prediction.probs.size() == 4);
}

TEST_CASE("discriminator cannot separate identical distributions") {
  std::mt19937_64 rng(9);
  const DomainClassifier disc(4, 8, rng);
  nn::NamedTensors params;
  disc.collect("d", params);
  Sgd::Group g{"d", {}, 0.05f};
  for (auto& [n, p] : params) g.params.push_back(p);
  Sgd opt({g}, 0.9f, 0.0f);
  std::normal_distribution<float> noise(0.0f, 1.0f);
  double last = 0;
  for (int step = 0; step < 300; ++step) {
    std::vector<float> x(64 * 4);
    for (auto& v : x) v = noise(rng);
    std::vector<int> tags(64);
    for (int i = 0; i < 64; ++i) tags[i] = i % 2;
    const Tensor f = Tensor::from({64, 4}, x);
    const auto l = domain_classification_loss(disc(f, 1.0f), tags);
    opt.zero_grad();
    l.loss.backward();
    opt.step();
    last = l.loss.item();
  }
  CHECK(last >= kLn2 - 0.05);
}

TEST_CASE("domain attention") {
  relation::RelationSet rs;
  rs.clips = 2;
  rs.r[2] = test::random_tensor({2, 3}, 7);
  rs.r[3] = test::random_tensor({2, 3}, 8);
  std::map<int, DomainPrediction> preds;
  preds[2] = prediction_of(Tensor::zeros({2, 2}));
  preds[3] = prediction_of(Tensor::from({2, 2}, {30.0f, -30.0f, -30.0f, 30.0f}));
  const auto a = domain_attention(rs, preds);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(a.attended.at(2).values()[i] == rs.r[2].values()[i]);
    CHECK(a.attended.at(3).values()[i] == doctest::Approx(2.0 * rs.r[3].values()[i]));
  }
  for (const auto& [n, ws] : a.weights)
    for (float w : ws) {
      CHECK(w >= 0.0f);
      CHECK(w <= 1.0f);
    }
  std::map<int, DomainPrediction> partial{{2, preds[2]}};
  CHECK_THROWS_AS(domain_attention(rs, partial), InvalidInput);

  for (double p = 0.5; p <= 0.991; p += 0.01) {
    std::map<int, DomainPrediction> sweep{{2, prediction_of(two_way({p, p}))}, {3, prediction_of(two_way({p, p}))}};
    const double h = normalized_domain_entropy(p, 1 - p);
    CHECK(domain_attention(rs, sweep).weights.at(2)[0] == doctest::Approx(1.0 - h).epsilon(1e-5));
  }
}

TEST_CASE("attention weight grows as domain entropy falls") {
  relation::RelationSet rs;
  rs.clips = 1;
  rs.r[2] = Tensor::full({1, 2}, 1.0f);
  double last = -1;
  for (double p : {0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99}) {
    std::map<int, DomainPrediction> pred{{2, prediction_of(two_way({p}))}};
    const double w = domain_attention(rs, pred).weights.at(2)[0];
    CHECK(w > last);
    last = w;
  }
}

TEST_CASE("action classifier") {
  std::mt19937_64 rng(10);
  const ActionClassifier heads(512, 4, 4, rng);
  const auto p = heads(Tensor::zeros({1, 512}));
  CHECK(p.verb_logits.shape() == Shape{1, 4});
  CHECK(p.noun_logits.shape() == Shape{1, 4});
  nn::NamedTensors params;
  heads.collect("c", params);
  for (int k = 0; k < 4; ++k) {
    CHECK(p.verb_logits.values()[k] == params[1].second.values()[k]);
    CHECK(p.noun_logits.values()[k] == params[3].second.values()[k]);
  }
  const Tensor same = test::random_tensor({2, 512}, 11);
  const auto twice = heads(ops::concat_rows(std::vector<Tensor>{ops::slice_cols(same, 0, 512), same}));
  CHECK(twice.verb_logits.values()[0] == twice.verb_logits.values()[8]);
  CHECK_THROWS_AS(heads(Tensor::zeros({1, 256})), InvalidInput);
}

TEST_CASE("classification loss") {
  const std::vector<TrainingLabel> labels{{data::Domain::Source, {1, 2}}, {data::Domain::Source, {3, 0}}};
  SUBCASE("uniform logits") {
    const ActionPrediction p{Tensor::zeros({2, 4}), Tensor::zeros({2, 4})};
    const auto l = classification_loss(p, labels);
    CHECK(l.verb.item() == doctest::Approx(1.386294).epsilon(1e-6));
    CHECK(l.noun.item() == doctest::Approx(1.386294).epsilon(1e-6));
  }
  SUBCASE("confident and correct") {
    std::vector<float> v(8, -40.0f), n(8, -40.0f);
    v[1] = 40.0f;
    v[4 + 3] = 40.0f;
    n[2] = 40.0f;
    n[4 + 0] = 40.0f;
    const auto l = classification_loss({Tensor::from({2, 4}, v), Tensor::from({2, 4}, n)}, labels);
    CHECK(l.verb.item() < 1e-6);
    CHECK(l.noun.item() < 1e-6);
  }
  SUBCASE("hand-computed batch") {
    const Tensor v = Tensor::from({2, 4}, {0.0f, 1.0f, 2.0f, 0.5f, 1.0f, 0.0f, 0.0f, 3.0f});
    const auto l = classification_loss({v, Tensor::zeros({2, 4})}, labels);
    const double row0 = std::log(1 + std::exp(1.0) + std::exp(2.0) + std::exp(0.5)) - 1.0;
    const double row1 = std::log(std::exp(1.0) + 2 + std::exp(3.0)) - 3.0;
    CHECK(l.verb.item() == doctest::Approx((row0 + row1) / 2).epsilon(1e-5));
  }
  SUBCASE("target rows are a contract violation") {
    const std::vector<TrainingLabel> leaked{{data::Domain::Source, {0, 0}}, {data::Domain::Target, {1, 1}}};
    const ActionPrediction p{Tensor::zeros({2, 4}), Tensor::zeros({2, 4})};
    CHECK_THROWS_AS(classification_loss(p, leaked), ContractViolation);
  }
}

TEST_CASE("attentive entropy") {
  SUBCASE("uniform class and domain predictions") {
    const ActionPrediction p{Tensor::zeros({1, 4}), Tensor::zeros({1, 4})};
    const std::vector<float> domain{0.5f, 0.5f};
    const auto ae = attentive_entropy(p, domain);
    CHECK(std::abs(ae.verb.item() - 2.772589) < 1e-5);
    CHECK(std::abs(ae.noun.item() - 2.772589) < 1e-5);
  }
  SUBCASE("one-hot class predictions") {
    const ActionPrediction p{Tensor::from({1, 3}, {60.0f, -60.0f, -60.0f}), Tensor::from({1, 2}, {-60.0f, 60.0f})};
    const std::vector<float> domain{0.3f, 0.7f};
    const auto ae = attentive_entropy(p, domain);
    CHECK(ae.verb.item() < 1e-6);
    CHECK(ae.noun.item() < 1e-6);
  }
  SUBCASE("mixed three-clip batch") {
    const Tensor v = Tensor::from({3, 2}, {0.0f, 0.0f, 1.0f, -1.0f, 2.0f, 0.0f});
    const std::vector<float> domain{0.5f, 0.5f, 0.9f, 0.1f, 1.0f, 0.0f};
    const auto ae = attentive_entropy({v, Tensor::zeros({3, 2})}, domain);
    double expect = 0;
    const double logits[3][2] = {{0, 0}, {1, -1}, {2, 0}};
    for (int c = 0; c < 3; ++c) {
      const double z = std::exp(logits[c][0]) + std::exp(logits[c][1]);
      const std::vector<double> p{std::exp(logits[c][0]) / z, std::exp(logits[c][1]) / z};
      const double hd = normalized_domain_entropy(domain[2 * c], domain[2 * c + 1]);
      expect += (1 + hd) * entropy(std::span<const double>(p));
    }
    CHECK(ae.verb.item() == doctest::Approx(expect / 3).epsilon(1e-5));
  }
}

TEST_CASE("total loss composition") {
  const auto scalar = [](float v) { return Tensor::from({1}, {v}, true); };
  LossBreakdown parts{scalar(1), scalar(1), scalar(1), {{2, scalar(1)}, {3, scalar(1)}}, scalar(1), scalar(1), scalar(1)};
  const LossWeights w{0.5f, 0.5f, 0.5f, 0.01f};
  CHECK(total_loss(parts, w).item() == doctest::Approx(3.52));

  LossBreakdown varied{scalar(0.7f), scalar(1.3f), scalar(0.4f), {{2, scalar(0.2f)}, {3, scalar(0.6f)}},
                       scalar(0.9f), scalar(0.1f), scalar(0.3f)};
  CHECK(total_loss(varied, LossWeights{0, 0, 0, 0}).item() == doctest::Approx(2.0));
  const LossWeights mixed{0.2f, 0.7f, 0.3f, 0.05f};
  const double expect = 0.7 + 1.3 + 0.2 * 0.4 + 0.7 * 0.4 + 0.3 * 0.9 + 0.05 * 0.4;
  const Tensor total = total_loss(varied, mixed);
  CHECK(total.item() == doctest::Approx(expect));
  total.backward();
  CHECK(varied.sd.grad()[0] == doctest::Approx(0.2));
  CHECK(varied.rd[3].grad()[0] == doctest::Approx(0.35));
  CHECK(varied.ae_noun.grad()[0] == doctest::Approx(0.05));
  const auto values = loss_values(varied, total);
  CHECK(values.rd.at(2) == doctest::Approx(0.2));

  varied.td = scalar(NAN);
  try {
    total_loss(varied, mixed, 7);
    FAIL("expected TrainingAbort");
  } catch (const TrainingAbort& e) {
    CHECK(e.epoch() == 7);
    CHECK(e.component() == "L_td");
  }
}

TEST_CASE("total loss gradient is the weighted sum of component gradients") {
  std::mt19937_64 rng(12);
  const ActionClassifier heads(6, 3, 3, rng);
  const DomainClassifier disc(6, 4, rng);
  const Tensor feat = test::random_tensor({4, 6}, 13);
  const std::vector<int> tags{0, 0, 1, 1};
  const std::vector<TrainingLabel> labels{{data::Domain::Source, {0, 1}}, {data::Domain::Source, {2, 2}}};
  const LossWeights w{0.3f, 0.6f, 0.9f, 0.2f};
  const auto build = [&]() {
    const auto pred = heads(feat);
    const std::vector<int> src{0, 1};
    const auto cls = classification_loss({ops::gather_rows(pred.verb_logits, src), ops::gather_rows(pred.noun_logits, src)}, labels);
    const auto td = video_domain_loss(disc, feat, tags, 1.0f);
    const auto ae = attentive_entropy(pred, td.prediction.probs);
    return LossBreakdown{cls.verb, cls.noun, td.loss, {{2, td.loss}}, td.loss, ae.verb, ae.noun};
  };
  feat.node()->grad.clear();
  total_loss(build(), w).backward();
  const std::vector<float> combined(feat.grad().begin(), feat.grad().end());

  std::vector<double> manual(feat.numel(), 0.0);
  const auto accumulate = [&](auto pick, double coef) {
    feat.node()->grad.clear();
    pick(build()).backward();
    for (std::size_t i = 0; i < manual.size(); ++i) manual[i] += coef * feat.grad()[i];
  };
  accumulate([](const LossBreakdown& b) { return b.y_verb; }, 1.0);
  accumulate([](const LossBreakdown& b) { return b.y_noun; }, 1.0);
  accumulate([](const LossBreakdown& b) { return b.sd; }, w.lambda_sd);
  accumulate([](const LossBreakdown& b) { return b.rd.at(2); }, w.lambda_rd);
  accumulate([](const LossBreakdown& b) { return b.td; }, w.lambda_td);
  accumulate([](const LossBreakdown& b) { return b.ae_verb; }, w.gamma);
  accumulate([](const LossBreakdown& b) { return b.ae_noun; }, w.gamma);
  for (std::size_t i = 0; i < manual.size(); ++i) CHECK(combined[i] == doctest::Approx(manual[i]).epsilon(1e-4));
}
