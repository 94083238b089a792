#include <cmath>
#include <filesystem>

#include "bikeod/model.hpp"
#include "bikeod/omp.hpp"
#include "doctest.h"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace bikeod;
using namespace bikeod::model;
using bikeod::testing::random_stack;
using bikeod::testing::random_tensor;

namespace {

ModelConfig tiny_config(const std::string& variant, std::size_t h = 3, std::size_t k = 1) {
  ModelConfig c;
  c.h_t = c.h_s = h;
  c.k_e = c.k_d = k;
  c.dropout = 0.0;
  c.embedding = EmbeddingConfig{2, 2, {3, 3}, 2};
  c.variant = features::feature_spec(variant);
  return c;
}

features::CalendarEncoding sample_encoding() {
  features::CalendarEncoding e;
  e.classes = {4, 2, 1, 0, 0, 1};
  return e;
}

Tensor forward(ForecastModel& m, const Tensor& x, const GraphStack& stack, const features::CalendarEncoding& enc) {
  ad::Tape tape;
  Binder bind(tape, m.params);
  return model_forward(bind, m, x, enc, stack, DropoutContext{}).value();
}

}  // namespace

TEST_CASE("init_params: Glorot bounds, zero biases, seed determinism") {
  CHECK(glorot_bound(4, 4) == doctest::Approx(std::sqrt(6.0 / 8.0)));
  const auto c = tiny_config("WIT", 4, 2);
  const auto a = init_params(c, 5, 7);
  const auto b = init_params(c, 5, 7);
  const auto d = init_params(c, 5, 8);
  bool differs = false;
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    const auto& p = a.params[i];
    CHECK(p.value == b.params[i].value);
    if (!(p.value == d.params[i].value)) differs = true;
    if (p.name.back() == 'b' && p.name[p.name.size() - 2] == '.') {
      for (double v : p.value.data()) CHECK(v == 0.0);
    } else if (p.value.rows() > 0) {
      const double bound = glorot_bound(p.value.rows(), p.value.cols());
      for (double v : p.value.data()) CHECK(std::abs(v) <= bound);
    }
  }
  CHECK(differs);
  CHECK(a.params.contains("enc0.P"));       // 9 + 2 -> 4 columns
  CHECK_FALSE(a.params.contains("enc1.P"));  // 4 -> 4
  CHECK(a.params.at("temporal.Wz").value.rows() == 5);
  ModelConfig bad = c;
  bad.dropout = 1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("embedding module") {
  auto m = init_params(tiny_config("T"), 5, 1);
  const auto enc = sample_encoding();
  CHECK(embed_time(m, enc) == embed_time(m, enc));
  features::CalendarEncoding other = enc;
  other.classes[0] = 5;
  CHECK_FALSE(embed_time(m, enc) == embed_time(m, other));

  for (auto& p : m.params)
    if (p.name.rfind("embed", 0) == 0) p.value.fill(0.0);
  const auto zero = embed_time(m, enc);
  CHECK(zero.cols() == 2);
  for (double v : zero.data()) CHECK(v == 0.0);

  // single branch, all widths 2: hand-evaluate the chain
  ad::ParameterSet ps;
  ps.add("embed.table0", Tensor{{1, 2}, {3, -4}, {0.5, 0.25}});
  ps.add("embed.dense0.W", Tensor{{1, -1}, {0.5, 2}});
  ps.add("embed.dense0.b", Tensor{{0.1, -0.2}});
  ps.add("embed.module0.W", Tensor{{1, 0}, {-1, 1}});
  ps.add("embed.module0.b", Tensor{{0, 0.5}});
  ps.add("embed.module1.W", Tensor{{2, 1}, {1, -3}});
  ps.add("embed.module1.b", Tensor{{-1, 0}});
  ps.add("embed.module2.W", Tensor{{1, 2}, {3, 4}});
  ps.add("embed.module2.b", Tensor{{0.5, -0.5}});
  ad::Tape tape;
  Binder bind(tape, ps);
  const auto out = embed_time(bind, {Tensor{{0, 1, 0}}}, DropoutContext{}).value();
  // row 1 of the table: (3, -4)
  // dense: (3*1 + -4*0.5 + 0.1, 3*-1 + -4*2 - 0.2) = (1.1, -11.2) -> relu (1.1, 0)
  // module0: (1.1, 0.5) -> relu (1.1, 0.5)
  // module1: (2.2 + 0.5 - 1, 1.1 - 1.5) = (1.7, -0.4) -> relu (1.7, 0)
  // module2: (1.7 + 0.5, 3.4 - 0.5) = (2.2, 2.9)
  CHECK(out(0, 0) == doctest::Approx(2.2));
  CHECK(out(0, 1) == doctest::Approx(2.9));

  ad::Tape t2;
  Binder b2(t2, ps);
  CHECK_THROWS_AS(embed_time(b2, {Tensor{{1, 1, 0}}}, DropoutContext{}), DataError);
}

TEST_CASE("tile_and_concat shapes") {
  Rng rng(2);
  const auto x = random_tensor(130, 4, rng);
  const auto e = random_tensor(1, 8, rng);
  const auto out = tile_and_concat(x, e);
  CHECK(out.rows() == 130);
  CHECK(out.cols() == 12);
  for (std::size_t r = 0; r < 130; ++r)
    for (std::size_t c = 0; c < 8; ++c) CHECK(out(r, 4 + c) == e(0, c));
  CHECK(tile_and_concat(x, Tensor(1, 0)) == x);
}

TEST_CASE("RMGC block against the triple-loop oracle") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng() % 8, f_in = 1 + rng() % 4, f_out = 1 + rng() % 4;
    const auto stack = random_stack(n, rng);
    RMGCBlock blk{random_tensor(7 * f_in, f_out, rng), random_tensor(1, f_out, rng),
                  f_in == f_out ? Tensor() : random_tensor(f_in, f_out, rng)};
    const auto h = random_tensor(n, f_in, rng, 2.0);
    const auto act = trial % 2 ? Activation::Tanh : Activation::Relu;
    const auto got = rmgc_forward(blk, h, stack, act);
    const auto want = testing::naive_rmgc(blk, h, stack, act);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t o = 0; o < f_out; ++o) CHECK(std::abs(got(i, o) - want[i][o]) <= 1e-12);
  }

  // identity graphs, zero input -> zero output
  std::vector<Tensor> eye(7, Tensor::identity(3));
  const GraphStack ident(eye);
  Tensor w(14, 2);
  for (std::size_t u = 0; u < 7; ++u) w(2 * u, 0) = w(2 * u + 1, 1) = 1.0;
  const auto zero = rmgc_forward(RMGCBlock{w, Tensor(1, 2), {}}, Tensor(3, 2), ident, Activation::Relu);
  for (double v : zero.data()) CHECK(v == 0.0);

  // zero weights isolate the residual path
  const auto stack = random_stack(4, rng);
  const auto h = random_tensor(4, 3, rng);
  CHECK(rmgc_forward(RMGCBlock{Tensor(21, 3), Tensor(1, 3), {}}, h, stack, Activation::Relu) == h);

  CHECK_THROWS_AS(rmgc_forward(RMGCBlock{Tensor(21, 2), Tensor(1, 2), {}}, h, stack, Activation::Relu), ShapeError);
}

TEST_CASE("temporal encoder") {
  ModelConfig c = tiny_config("X", 4);
  auto m = init_params(c, 3, 5);
  auto run = [&](const std::vector<Tensor>& xs, CellType cell, const ad::ParameterSet& ps) {
    ad::Tape tape;
    Binder bind(tape, ps);
    std::vector<ad::Var> vs;
    for (const auto& x : xs) vs.push_back(tape.constant(x));
    return temporal_encode(bind, vs, cell).value();
  };
  const std::vector<Tensor> zeros(4, Tensor(1, 3));
  const auto h0 = run(zeros, CellType::Gru, m.params);
  for (double v : h0.data()) CHECK(v == 0.0);

  Rng rng(6);
  std::vector<Tensor> seq;
  for (int k = 0; k < 4; ++k) seq.push_back(random_tensor(1, 3, rng));
  auto rev = seq;
  std::reverse(rev.begin(), rev.end());
  CHECK_FALSE(run(seq, CellType::Gru, m.params) == run(rev, CellType::Gru, m.params));

  // against the loop oracle
  std::vector<std::vector<double>> xs;
  for (const auto& s : seq) xs.emplace_back(s.data().begin(), s.data().end());
  const auto oracle = testing::naive_gru(xs, m.params);
  const auto got = run(seq, CellType::Gru, m.params);
  for (std::size_t o = 0; o < 4; ++o) CHECK(got(0, o) == doctest::Approx(oracle[o]).epsilon(1e-13));

  // h_t = 1, N = 1 scalar recurrence rolled by hand
  ad::ParameterSet ps;
  ps.add("temporal.Wz", Tensor{{0.5}});
  ps.add("temporal.Uz", Tensor{{-1.0}});
  ps.add("temporal.bz", Tensor{{0.0}});
  ps.add("temporal.Wr", Tensor{{1.0}});
  ps.add("temporal.Ur", Tensor{{1.0}});
  ps.add("temporal.br", Tensor{{0.0}});
  ps.add("temporal.Wn", Tensor{{2.0}});
  ps.add("temporal.Un", Tensor{{0.5}});
  ps.add("temporal.bn", Tensor{{0.1}});
  const double in[4] = {1.0, -0.5, 0.25, 2.0};
  double h = 0.0;
  for (double x : in) {
    const double z = 1.0 / (1.0 + std::exp(-(0.5 * x - h)));
    const double r = 1.0 / (1.0 + std::exp(-(x + h)));
    const double n = std::tanh(2.0 * x + 0.5 * r * h + 0.1);
    h = (1 - z) * n + z * h;
  }
  std::vector<Tensor> scalar;
  for (double x : in) scalar.push_back(Tensor{{x}});
  CHECK(run(scalar, CellType::Gru, ps)(0, 0) == doctest::Approx(h).epsilon(1e-14));

  ModelConfig lc = c;
  lc.cell = CellType::Lstm;
  auto lm = init_params(lc, 3, 5);
  const auto l0 = run(zeros, CellType::Lstm, lm.params);
  for (double v : l0.data()) CHECK(v == 0.0);
}

TEST_CASE("model_forward: zero parameters give zero output") {
  auto m = init_params(tiny_config("WIT"), 5, 3);
  for (auto& p : m.params) p.value.fill(0.0);
  Rng rng(1);
  const auto y = forward(m, random_tensor(5, 9, rng), random_stack(5, rng), sample_encoding());
  REQUIRE(y.rows() == 5);
  for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("model_forward equals a composition of the sub-operations") {
  auto m = init_params(tiny_config("T"), 5, 11);
  Rng rng(12);
  const auto stack = random_stack(5, rng);
  const auto x = random_tensor(5, 4, rng);
  const auto enc = sample_encoding();
  const auto& P = m.params;

  const Tensor e_t = embed_time(m, enc);
  const Tensor h0 = tile_and_concat(x, e_t);
  const Tensor h1 = rmgc_forward(RMGCBlock{P.at("enc0.W").value, P.at("enc0.b").value, P.at("enc0.P").value}, h0,
                                 stack, Activation::Relu);
  std::vector<std::vector<double>> snaps(4);
  for (std::size_t k = 0; k < 4; ++k)
    for (std::size_t r = 0; r < 5; ++r) snaps[k].push_back(x(r, k));
  const auto ht = testing::naive_gru(snaps, P);
  Tensor d0(5, 6);
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t c = 0; c < 3; ++c) d0(r, c) = h1(r, c);
    for (std::size_t c = 0; c < 3; ++c) d0(r, 3 + c) = ht[c];
  }
  const Tensor d1 = rmgc_forward(RMGCBlock{P.at("dec0.W").value, P.at("dec0.b").value, P.at("dec0.P").value}, d0,
                                 stack, Activation::Relu);
  const auto y = forward(m, x, stack, enc);
  for (std::size_t r = 0; r < 5; ++r) {
    double want = P.at("head.b").value(0, 0);
    for (std::size_t c = 0; c < 3; ++c) want += d1(r, c) * P.at("head.W").value(c, 0);
    CHECK(y(r, 0) == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("shape contract sweep") {
  Rng rng(4);
  for (std::size_t n : {5, 50, 130}) {
    const auto stack = random_stack(n, rng);
    for (const char* v : {"X", "T", "WIT"}) {
      auto c = tiny_config(v, 4);
      c.embedding.p = 10;
      auto m = init_params(c, n, 1);
      const auto x = random_tensor(n, c.variant.width(), rng);
      CHECK(predict(m, x, sample_encoding(), stack).rows() == n);
      CHECK(predict(m, x, sample_encoding(), stack).cols() == 1);
    }
  }
  auto m = init_params(tiny_config("X"), 5, 1);
  const auto stack = random_stack(5, rng);
  CHECK_THROWS_AS(predict(m, Tensor(5, 9), sample_encoding(), stack), ShapeError);
  CHECK_THROWS_AS(predict(m, Tensor(4, 4), sample_encoding(), random_stack(4, rng)), ShapeError);
}

TEST_CASE("full tiny model passes finite differences") {
  for (const char* variant : {"X", "WIT"}) {
    for (CellType cell : {CellType::Gru, CellType::Lstm}) {
      auto c = tiny_config(variant);
      c.cell = cell;
      c.activation = Activation::Tanh;  // smooth everywhere
      c.dropout = 0.3;
      auto m = init_params(c, 5, 21);
      Rng rng(22);
      const auto stack = random_stack(5, rng);
      const auto x = random_tensor(5, c.variant.width(), rng);
      const auto target = random_tensor(5, 1, rng, 3.0);
      const auto enc = sample_encoding();
      auto loss = [&](ad::Tape& tape, ad::ParameterSet& ps) {
        Rng drop_rng(99);  // identical masks on every evaluation
        Binder bind(tape, ps, &ps);
        const auto y = model_forward(bind, m, x, enc, stack, DropoutContext{Mode::Train, &drop_rng, c.dropout});
        return ad::mse_loss(y, tape.constant(target));
      };
      const auto res = testing::grad_check(m.params, loss);
      INFO(variant, " ", cell_name(cell), " worst ", res.worst);
      CHECK(res.max_rel_error <= 1e-4);
      CHECK(res.checked == m.params.scalar_count());
    }
  }
}

TEST_CASE("variant T with a zeroed embedding output equals variant X") {
  auto t = init_params(tiny_config("T"), 5, 3);
  t.params.at("embed.module2.W").value.fill(0.0);  // E_T = 0 (bias is already 0)
  auto x = init_params(tiny_config("X"), 5, 3);
  const std::size_t L = 4, p = 2, U = 7;
  for (auto& param : x.params) {
    const auto& src = t.params.at(param.name).value;
    if (param.name == "enc0.W") {
      for (std::size_t u = 0; u < U; ++u)
        for (std::size_t k = 0; k < L; ++k)
          for (std::size_t o = 0; o < param.value.cols(); ++o) param.value(u * L + k, o) = src(u * (L + p) + k, o);
    } else if (param.name == "enc0.P") {
      for (std::size_t k = 0; k < L; ++k)
        for (std::size_t o = 0; o < param.value.cols(); ++o) param.value(k, o) = src(k, o);
    } else {
      param.value = src;
    }
  }
  Rng rng(9);
  const auto stack = random_stack(5, rng);
  const auto in = random_tensor(5, 4, rng);
  const auto yt = forward(t, in, stack, sample_encoding());
  const auto yx = forward(x, in, stack, sample_encoding());
  CHECK(yt == yx);
}

TEST_CASE("dropout is active only in training and unbiased on a linear toy") {
  Rng rng(5);
  ad::ParameterSet ps;
  ps.add("w", random_tensor(6, 1, rng));
  const auto x = random_tensor(1, 6, rng);
  auto eval = [&](Mode mode, Rng* r) {
    ad::Tape tape;
    Binder bind(tape, ps);
    const DropoutContext drop{mode, r, 0.5};
    return ad::matmul(drop.apply(tape.constant(x)), bind("w")).value()(0, 0);
  };
  const double infer = eval(Mode::Infer, &rng);
  CHECK(eval(Mode::Infer, &rng) == infer);
  const int trials = 20000;
  double s = 0.0, sq = 0.0;
  for (int i = 0; i < trials; ++i) {
    const double v = eval(Mode::Train, &rng);
    s += v;
    sq += v * v;
  }
  const double mean = s / trials;
  const double sd = std::sqrt(sq / trials - mean * mean);
  CHECK(std::abs(mean - infer) <= 4.0 * sd / std::sqrt(static_cast<double>(trials)));
}

TEST_CASE("inference is deterministic across runs and thread counts; checkpoints round-trip") {
  auto c = tiny_config("WIT", 8, 2);
  auto m = init_params(c, 40, 17);
  Rng rng(8);
  const auto stack = random_stack(40, rng);
  const auto x = random_tensor(40, 9, rng, 5.0);
  std::vector<features::FeatureMatrix> fit{{Hour{0}, x}, {Hour{1}, random_tensor(40, 9, rng, 5.0)}};
  m.scaler = features::Standardizer::fit(fit);
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const auto one = predict(m, x, sample_encoding(), stack);
  omp_set_num_threads(4);
  const auto four = predict(m, x, sample_encoding(), stack);
  omp_set_num_threads(saved);
  CHECK(one == four);
  CHECK(predict(m, x, sample_encoding(), stack) == one);
  for (double v : one.data()) CHECK(v >= 0.0);

  const auto path = std::filesystem::temp_directory_path() / "bikeod_model_test.json";
  save_checkpoint(path, m);
  const auto back = load_checkpoint(path);
  CHECK(back.config == m.config);
  CHECK(back.scaler == m.scaler);
  CHECK(predict(back, x, sample_encoding(), stack) == one);
  CHECK(checkpoint_json(back) == checkpoint_json(m));
  std::filesystem::remove(path);

  CHECK_THROWS_AS(parse_checkpoint("{}"), DataError);
  CHECK_THROWS_AS(parse_checkpoint("not json"), DataError);
  auto text = checkpoint_json(m);
  text.replace(text.find("\"h_s\":8"), 7, "\"h_s\":9");
  CHECK_THROWS_AS(parse_checkpoint(text), DataError);
}
