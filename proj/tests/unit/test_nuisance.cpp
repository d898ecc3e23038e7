#include <doctest.h>

#include <cmath>
#include <sstream>

#include "fixtures.hpp"
#include "stratope/environment.hpp"
#include "stratope/errors.hpp"
#include "stratope/nuisance.hpp"

using namespace stratope;

namespace {

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Contexts with two Gaussian features and q(s, a) = sigmoid(b_a + w_a . x).
DiscreteEnvironment logistic_env(std::size_t contexts, std::uint64_t seed) {
  Rng rng(seed);
  const double w[2][3] = {{0.3, 1.2, -0.8}, {-0.5, -0.4, 1.5}};
  std::vector<Context> ctx(contexts);
  std::vector<std::vector<double>> q(contexts, std::vector<double>(2));
  for (std::size_t s = 0; s < contexts; ++s) {
    ctx[s].features = {rng.normal(), rng.normal()};
    for (std::size_t a = 0; a < 2; ++a) {
      q[s][a] = logistic(w[a][0] + w[a][1] * ctx[s].features[0] + w[a][2] * ctx[s].features[1]);
    }
  }
  return DiscreteEnvironment(std::move(ctx), std::vector<double>(contexts, 1.0 / static_cast<double>(contexts)), q);
}

std::vector<double> central_difference(const std::function<double(const Eigen::VectorXd&)>& f,
                                       const Eigen::VectorXd& x) {
  std::vector<double> g(static_cast<std::size_t>(x.size()));
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd hi = x, lo = x;
    hi(i) += 1e-5;
    lo(i) -= 1e-5;
    g[static_cast<std::size_t>(i)] = (f(hi) - f(lo)) / 2e-5;
  }
  return g;
}

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::max(std::abs(analytic), std::abs(numeric)));
}

std::vector<BinaryRow> random_binary_rows(Rng& rng, std::size_t m, std::size_t d) {
  std::vector<BinaryRow> rows(m);
  for (auto& r : rows) {
    r.x = Eigen::VectorXd(static_cast<Eigen::Index>(d + 1));
    r.x(0) = 1.0;
    for (std::size_t j = 1; j <= d; ++j) r.x(static_cast<Eigen::Index>(j)) = rng.normal();
    r.target = rng.uniform();
    r.weight = 1.0 + static_cast<double>(rng.below(5));
  }
  return rows;
}

}  // namespace

TEST_CASE("fit config validation") {
  FitConfig c;
  CHECK_NOTHROW(c.validate());
  c.iterations = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = FitConfig{};
  c.learning_rate = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = FitConfig{};
  c.l2_penalty = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("gradient checks of the logistic and squared losses") {
  Rng rng(31);
  for (Link link : {Link::kLogistic, Link::kIdentity}) {
    BinaryLoss loss(random_binary_rows(rng, 15, 3), link, 0.7);
    for (int point = 0; point < 20; ++point) {
      Eigen::VectorXd theta(4);
      for (Eigen::Index i = 0; i < 4; ++i) theta(i) = 2.0 * rng.normal();
      const auto numeric = central_difference([&](const Eigen::VectorXd& t) { return loss.value(t); }, theta);
      const Eigen::VectorXd analytic = loss.gradient(theta);
      for (Eigen::Index i = 0; i < 4; ++i) {
        CHECK(relative_error(analytic(i), numeric[static_cast<std::size_t>(i)]) < 1e-4);
      }
    }
  }
}

TEST_CASE("gradient check of the multinomial loss") {
  Rng rng(32);
  std::vector<MultinomialRow> rows(12);
  for (auto& r : rows) {
    r.x = Eigen::VectorXd(3);
    r.x << 1.0, rng.normal(), rng.normal();
    r.counts = Eigen::VectorXd(4);
    for (Eigen::Index a = 0; a < 4; ++a) r.counts(a) = static_cast<double>(rng.below(4));
    r.counts(0) += 1.0;
    r.weight = r.counts.sum();
  }
  MultinomialLoss loss(rows, 4, 0.3);
  for (int point = 0; point < 20; ++point) {
    Eigen::MatrixXd theta(4, 3);
    for (Eigen::Index i = 0; i < theta.size(); ++i) theta.data()[i] = 2.0 * rng.normal();
    const Eigen::MatrixXd analytic = loss.gradient(theta);
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      Eigen::MatrixXd hi = theta, lo = theta;
      hi.data()[i] += 1e-5;
      lo.data()[i] -= 1e-5;
      const double numeric = (loss.value(hi) - loss.value(lo)) / 2e-5;
      CHECK(relative_error(analytic.data()[i], numeric) < 1e-4);
    }
  }
}

TEST_CASE("fit_q") {
  SUBCASE("all rewards one") {
    std::vector<LoggedSample> samples;
    for (std::size_t i = 0; i < 40; ++i) {
      samples.push_back({0, Context{i % 4, {static_cast<double>(i % 4) - 1.5}}, 0, 1.0});
    }
    const auto rows = q_design(samples, 0, Link::kLogistic, 1.0);
    BinaryLoss loss(rows, Link::kLogistic, FitConfig{}.l2_penalty);
    std::vector<double> trace;
    gradient_descent(loss, Eigen::VectorXd::Zero(2), FitConfig{}, &trace);
    for (std::size_t i = 1; i < trace.size(); ++i) CHECK(trace[i] <= trace[i - 1] + 1e-15);
    const auto model = fit_q(samples, 1);
    for (std::size_t s = 0; s < 4; ++s) {
      CHECK(model.predict(Context{s, {static_cast<double>(s) - 1.5}}, 0) > 0.9);
    }
  }
  SUBCASE("one step from zero starts at one half") {
    std::vector<LoggedSample> samples{{0, Context{0, {1.0}}, 0, 1.0}, {0, Context{1, {-1.0}}, 0, 1.0}};
    FitConfig c;
    c.iterations = 1;
    c.learning_rate = 1e-12;
    const auto model = fit_q(samples, 1, c);
    CHECK(model.predict(Context{0, {1.0}}, 0) == doctest::Approx(0.5).epsilon(1e-9));
    c.learning_rate = 0.1;
    // Gradient at zero: intercept -(1 - 0.5), slope 0, so the intercept moves by lr / 2.
    const auto stepped = fit_q(samples, 1, c);
    CHECK(stepped.params()(0, 0) == doctest::Approx(0.05));
    CHECK(stepped.params()(0, 1) == doctest::Approx(0.0));
  }
  SUBCASE("an action without samples falls back to the mean reward") {
    std::vector<LoggedSample> samples{{0, Context{0, {0.0}}, 0, 1.0},
                                      {0, Context{0, {0.0}}, 0, 0.0},
                                      {0, Context{0, {0.0}}, 0, 1.0},
                                      {0, Context{0, {0.0}}, 0, 1.0}};
    const auto model = fit_q(samples, 3);
    CHECK_FALSE(model.fallback_actions()[0]);
    CHECK(model.fallback_actions()[1]);
    CHECK(model.predict(Context{0, {5.0}}, 2) == doctest::Approx(0.75));
  }
  SUBCASE("well-specified logistic environment, n = 10^4") {
    const auto env = logistic_env(60, 4);
    const std::vector<PolicyPtr> loggers{fixtures::uniform()};
    const std::vector<std::size_t> sizes{10000};
    const auto data = sample_stratified(env, loggers, sizes, 5);
    const auto model = fit_q(data, 2);
    double mse = 0.0;
    for (std::size_t s = 0; s < env.num_contexts(); ++s) {
      for (std::size_t a = 0; a < 2; ++a) {
        const double e = model.predict(env.context(s), a) - env.q(s, a);
        mse += e * e / 120.0;
      }
    }
    CHECK(mse < 0.01);
    for (std::size_t s = 0; s < env.num_contexts(); ++s) {
      const double p = model.predict(env.context(s), 0);
      CHECK((p >= 0.0 && p <= 1.0));
    }
  }
  SUBCASE("identity link recovers a linear response") {
    std::vector<LoggedSample> samples;
    for (std::size_t i = 0; i < 11; ++i) {
      const double x = static_cast<double>(i) / 10.0;
      samples.push_back({0, Context{i, {x}}, 0, 0.2 + 0.5 * x});
    }
    FitConfig c;
    c.l2_penalty = 0.0;
    c.iterations = 20000;
    c.learning_rate = 0.5;
    const auto model = fit_q(samples, 1, c, Link::kIdentity);
    CHECK(model.params()(0, 0) == doctest::Approx(0.2).epsilon(1e-6));
    CHECK(model.params()(0, 1) == doctest::Approx(0.5).epsilon(1e-6));
  }
  SUBCASE("standardised fitting predicts on the raw scale") {
    const auto env = logistic_env(30, 6);
    const std::vector<PolicyPtr> loggers{fixtures::uniform()};
    const std::vector<std::size_t> sizes{3000};
    const auto data = sample_stratified(env, loggers, sizes, 7);
    FitConfig raw, std_cfg;
    raw.l2_penalty = std_cfg.l2_penalty = 0.0;
    raw.iterations = std_cfg.iterations = 20000;
    std_cfg.standardize = true;
    const auto a = fit_q(data, 2, raw), b = fit_q(data, 2, std_cfg);
    for (std::size_t s = 0; s < env.num_contexts(); ++s) {
      CHECK(a.predict(env.context(s), 1) == doctest::Approx(b.predict(env.context(s), 1)).epsilon(1e-3));
    }
  }
  SUBCASE("deterministic") {
    const auto env = logistic_env(10, 8);
    const std::vector<PolicyPtr> loggers{fixtures::uniform()};
    const std::vector<std::size_t> sizes{500};
    const auto data = sample_stratified(env, loggers, sizes, 9);
    CHECK(fit_q(data, 2).params() == fit_q(data, 2).params());
  }
  CHECK_THROWS_AS(fit_q(std::span<const LoggedSample>{}, 2), std::invalid_argument);
}

TEST_CASE("fit_behavior") {
  SUBCASE("uniform actions give probabilities near 1/A") {
    const auto env = logistic_env(40, 10);
    const std::vector<PolicyPtr> loggers{fixtures::uniform(3)};
    const std::vector<std::size_t> sizes{10000};
    const auto q3 = DiscreteEnvironment(env.contexts(), env.context_probs(),
                                        std::vector<std::vector<double>>(40, std::vector<double>(3, 0.5)));
    const auto data = sample_stratified(q3, loggers, sizes, 11);
    const auto model = fit_behavior(data, 3);
    for (std::size_t s = 0; s < q3.num_contexts(); ++s) {
      for (double p : model.policy()->probabilities(q3.context(s))) CHECK(std::abs(p - 1.0 / 3.0) < 0.05);
    }
  }
  SUBCASE("well-specified softmax logger") {
    const auto env = logistic_env(40, 12);
    LinearScorer truth{Eigen::MatrixXd(2, 2), Eigen::VectorXd(2)};
    truth.weights << 1.0, -0.5, -0.7, 0.4;
    truth.bias << 0.2, -0.1;
    const std::vector<PolicyPtr> loggers{std::make_shared<const LinearSoftmaxPolicy>(truth)};
    const std::vector<std::size_t> sizes{10000};
    const auto data = sample_stratified(env, loggers, sizes, 13);
    const auto model = fit_behavior(data, 2);
    double tv = 0.0;
    for (std::size_t s = 0; s < env.num_contexts(); ++s) {
      const auto p = model.policy()->probabilities(env.context(s));
      const auto t = loggers[0]->probabilities(env.context(s));
      tv += 0.5 * (std::abs(p[0] - t[0]) + std::abs(p[1] - t[1])) / 40.0;
    }
    CHECK(tv < 0.05);
  }
  SUBCASE("pooled strata estimate the marginal logger") {
    const auto env = DiscreteEnvironment(std::vector<Context>{Context{0, {}}}, {1.0}, {{0.5, 0.5}});
    const std::vector<PolicyPtr> loggers{fixtures::table({{1.0, 0.0}}), fixtures::table({{0.0, 1.0}})};
    const std::vector<std::size_t> sizes{250, 750};
    const auto data = sample_stratified(env, loggers, sizes, 14);
    const auto p = fit_behavior(data, 2).policy()->probabilities(env.context(0));
    CHECK(std::abs(p[0] - 0.25) < 0.03);
    CHECK(std::abs(p[1] - 0.75) < 0.03);
  }
  SUBCASE("TV distance to the marginal shrinks with n") {
    const auto env = logistic_env(20, 15);
    LinearScorer s1{Eigen::MatrixXd(2, 2), Eigen::VectorXd::Zero(2)};
    s1.weights << 0.8, 0.0, -0.8, 0.0;
    const std::vector<PolicyPtr> loggers{std::make_shared<const LinearSoftmaxPolicy>(s1),
                                         fixtures::uniform()};
    auto tv_at = [&](std::size_t half) {
      double tv = 0.0;
      for (std::uint64_t rep = 0; rep < 5; ++rep) {
        const std::vector<std::size_t> sizes{half, half};
        const auto data = sample_stratified(env, loggers, sizes, 100 + rep);
        const auto star = marginal_policy(loggers, std::vector<double>{0.5, 0.5});
        const auto model = fit_behavior(data, 2);
        for (std::size_t s = 0; s < env.num_contexts(); ++s) {
          const auto p = model.policy()->probabilities(env.context(s));
          const auto t = star->probabilities(env.context(s));
          tv += std::abs(p[0] - t[0]) / 100.0;
        }
      }
      return tv;
    };
    CHECK(tv_at(5000) < tv_at(100));
  }
  SUBCASE("single-action data gives a near point mass") {
    std::vector<LoggedSample> samples(50, LoggedSample{0, Context{0, {1.0}}, 1, 1.0});
    const auto p = fit_behavior(samples, 2).policy()->probabilities(Context{0, {1.0}});
    CHECK(p[1] > 0.99);
  }
}

TEST_CASE("fit_multinomial separates well-separated classes") {
  std::vector<std::vector<double>> x;
  std::vector<std::size_t> y;
  Rng rng(16);
  for (int i = 0; i < 300; ++i) {
    const std::size_t c = static_cast<std::size_t>(i % 3);
    x.push_back({4.0 * static_cast<double>(c) + 0.3 * rng.normal(), 0.3 * rng.normal()});
    y.push_back(c);
  }
  const auto scorer = fit_multinomial(x, y, 3);
  GreedyPolicy g(scorer);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < x.size(); ++i) hits += g.greedy_action(Context{i, x[i]}) == y[i] ? 1 : 0;
  CHECK(hits == x.size());
}

TEST_CASE("q model text round trip") {
  Eigen::MatrixXd params(2, 3);
  params << 0.1, -0.2, 0.3, 1.0 / 3.0, 2.5, -7.0;
  const QModel model(params, Link::kLogistic, 2.0, {false, true});
  std::stringstream ss;
  write_q_model(ss, model);
  const auto back = read_q_model(ss);
  CHECK(back.params() == model.params());
  CHECK(back.r_max() == 2.0);
  CHECK(back.link() == Link::kLogistic);
  CHECK(back.predict(Context{0, {0.4, -1.0}}, 1) == model.predict(Context{0, {0.4, -1.0}}, 1));
  std::stringstream bad("qmodel 2 1 1 logistic\n0.1\n");
  CHECK_THROWS_AS(read_q_model(bad), ParseError);
}

TEST_CASE("fitters plug into the estimators") {
  const auto env = logistic_env(10, 17);
  const std::vector<PolicyPtr> loggers{fixtures::uniform()};
  const std::vector<std::size_t> sizes{200};
  const auto data = sample_stratified(env, loggers, sizes, 18);
  const auto g = make_q_fitter(2)(data);
  std::vector<double> out(2);
  g.values(env.context(0), out);
  CHECK((out[0] >= 0.0 && out[0] <= 1.0));
  const auto b = make_behavior_fitter(2)(data);
  CHECK(b->probabilities(env.context(0)).size() == 2);
}
