#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "mepoi/checkpoint.hpp"
#include "mepoi/optim.hpp"
#include "mepoi/rng.hpp"
#include "mepoi/tape.hpp"

#include "test_util.hpp"

using namespace mepoi;
using namespace mepoi::ops;
using testutil::grad_check;
using testutil::rand_simplex;
using testutil::rand_tensor;
using testutil::rel_err;

TEST_SUITE("numcore") {

TEST_CASE("tensor shape checks") {
  Tensor<double> a = Tensor<double>::from({2, 2}, {1, 2, 3, 4});
  Tensor<double> b = Tensor<double>::from({2, 1}, {1, 1});
  Tensor<double> c = matmul_plain(a, b);
  CHECK(c.at(0, 0) == doctest::Approx(3.0));
  CHECK(c.at(1, 0) == doctest::Approx(7.0));
  CHECK_THROWS_AS(matmul_plain(b, a), std::invalid_argument);
  CHECK_THROWS_AS(Tensor<double>::from({3}, {1, 2}), std::invalid_argument);
  Tensor<double> s = Tensor<double>::scalar(5.0);
  CHECK(s.size() == 1);
  CHECK(s.rank() == 0);
}

TEST_CASE("matmul values and 1x1 edge") {
  Tape<double> tp;
  auto a = tp.constant(Tensor<double>::from({1, 1}, {3.0}));
  auto b = tp.constant(Tensor<double>::from({1, 1}, {-2.0}));
  auto c = matmul(a, b);
  CHECK(tp.val(c).at(0, 0) == doctest::Approx(-6.0));
}

TEST_CASE("softmax example and properties") {
  Tape<double> tp;
  auto x = tp.constant(Tensor<double>::from({1, 2}, {0.0, std::log(3.0)}));
  auto s = softmax_rows(x);
  CHECK(tp.val(s).at(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(tp.val(s).at(0, 1) == doctest::Approx(0.75).epsilon(1e-12));

  // translation invariance and normalization on random rows
  Rng rng(11);
  Tensor<double> raw = rand_tensor({4, 7}, rng, 3.0);
  Tensor<double> shifted = raw.clone();
  for (i64 r = 0; r < 4; ++r)
    for (i64 c = 0; c < 7; ++c) shifted.at(r, c) += 100.0;
  Tape<double> tp2;
  auto s1 = softmax_rows(tp2.constant(raw));
  auto s2 = softmax_rows(tp2.constant(shifted));
  for (i64 r = 0; r < 4; ++r) {
    double sum = 0.0;
    for (i64 c = 0; c < 7; ++c) {
      sum += tp2.val(s1).at(r, c);
      CHECK(tp2.val(s1).at(r, c) == doctest::Approx(tp2.val(s2).at(r, c)).epsilon(1e-12));
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("softmax honors additive -inf mask and rejects fully masked rows") {
  const double ninf = -std::numeric_limits<double>::infinity();
  Tape<double> tp;
  auto x = tp.constant(Tensor<double>::from({1, 3}, {1.0, ninf, 2.0}));
  auto s = softmax_rows(x);
  CHECK(tp.val(s).at(0, 1) == 0.0);
  CHECK(tp.val(s).at(0, 0) + tp.val(s).at(0, 2) == doctest::Approx(1.0));

  Tape<double> tp2;
  auto bad = tp2.constant(Tensor<double>::from({1, 2}, {ninf, ninf}));
  CHECK_THROWS_AS(softmax_rows(bad), std::invalid_argument);
}

TEST_CASE("layernorm example and zero-variance row") {
  Tape<double> tp;
  auto x = tp.constant(Tensor<double>::from({1, 2}, {1.0, 3.0}));
  auto g = tp.constant(Tensor<double>::from({2}, {1.0, 1.0}));
  auto b = tp.constant(Tensor<double>::from({2}, {0.0, 0.0}));
  auto y = layernorm_rows(x, g, b, 1e-5);
  CHECK(tp.val(y).at(0, 0) == doctest::Approx(-0.9999950000374996).epsilon(1e-10));
  CHECK(tp.val(y).at(0, 1) == doctest::Approx(0.9999950000374996).epsilon(1e-10));

  auto flat = tp.constant(Tensor<double>::full({1, 4}, 2.5));
  auto g4 = tp.constant(Tensor<double>::full({4}, 1.0));
  auto b4 = tp.constant(Tensor<double>::zeros({4}));
  auto yf = layernorm_rows(flat, g4, b4, 1e-5);
  for (i64 c = 0; c < 4; ++c) CHECK(tp.val(yf).at(0, c) == doctest::Approx(0.0));
}

TEST_CASE("layernorm normalizes random rows") {
  Rng rng(5);
  Tape<double> tp;
  auto x = tp.constant(rand_tensor({6, 16}, rng, 2.0));
  auto g = tp.constant(Tensor<double>::full({16}, 1.0));
  auto b = tp.constant(Tensor<double>::zeros({16}));
  auto y = layernorm_rows(x, g, b, 1e-5);
  for (i64 r = 0; r < 6; ++r) {
    double mu = 0.0, var = 0.0;
    for (i64 c = 0; c < 16; ++c) mu += tp.val(y).at(r, c);
    mu /= 16.0;
    for (i64 c = 0; c < 16; ++c) var += (tp.val(y).at(r, c) - mu) * (tp.val(y).at(r, c) - mu);
    var /= 16.0;
    CHECK(std::abs(mu) < 1e-9);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("cosine similarity examples") {
  Tape<double> tp;
  auto a = tp.constant(Tensor<double>::from({3, 2}, {1, 0, 1, 0, 0, 0}));
  auto b = tp.constant(Tensor<double>::from({3, 2}, {0, 1, 1, 1, 1, 1}));
  auto c = cosine_rows(a, b, 1e-8);
  CHECK(tp.val(c).at(0) == doctest::Approx(0.0));
  CHECK(tp.val(c).at(1) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(tp.val(c).at(2) == doctest::Approx(0.0));  // zero vector guarded to 0
}

TEST_CASE("kl divergence examples and nonnegativity") {
  Tape<double> tp;
  auto q = tp.constant(Tensor<double>::from({2}, {0.5, 0.5}));
  auto kl = kl_divergence(Tensor<double>::from({2}, {1.0, 0.0}), q);
  CHECK(tp.val(kl).at(0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  auto q2 = tp.constant(Tensor<double>::from({2}, {0.25, 0.75}));
  auto kl2 = kl_divergence(Tensor<double>::from({2}, {0.25, 0.75}), q2);
  CHECK(tp.val(kl2).at(0) == doctest::Approx(0.0));

  // q with a zero entry stays finite through the eps clamp
  auto q3 = tp.constant(Tensor<double>::from({2}, {1.0, 0.0}));
  auto kl3 = kl_divergence(Tensor<double>::from({2}, {0.5, 0.5}), q3);
  CHECK(std::isfinite(tp.val(kl3).at(0)));

  Rng rng(17);
  for (int i = 0; i < 25; ++i) {
    Tensor<double> r = rand_simplex(1, 9, rng);
    Tensor<double> qq = rand_simplex(1, 9, rng);
    Tape<double> t;
    auto qv = t.constant(qq);
    auto v = kl_rows(r, qv);
    CHECK(t.val(v).at(0) >= -1e-12);
  }
}

TEST_CASE("softmax cross entropy uniform and a 2-way example") {
  Tape<double> tp;
  auto l = tp.constant(Tensor<double>::zeros({3, 5}));
  auto loss = softmax_xent_rows(l, {0, 3, 4});
  CHECK(tp.val(loss).at(0) == doctest::Approx(std::log(5.0)).epsilon(1e-12));

  // margin of 1 between the two logits: ln(1 + e^-1)
  auto l2 = tp.constant(Tensor<double>::from({1, 2}, {1.0, 0.0}));
  auto loss2 = softmax_xent_rows(l2, {0});
  CHECK(tp.val(loss2).at(0) == doctest::Approx(0.31326168751822286).epsilon(1e-12));
}

TEST_CASE("backward rejects non-scalar loss and pure-constant graphs") {
  Tape<double> tp;
  auto x = tp.constant(Tensor<double>::from({2}, {1, 2}));
  auto y = affine(x, 2.0, 0.0);
  CHECK_THROWS_AS(tp.backward(y), std::invalid_argument);

  Tape<double> tp2;
  auto c = tp2.constant(Tensor<double>::scalar(4.0));
  CHECK_THROWS_AS(tp2.backward(c), std::invalid_argument);
}

TEST_CASE("non-participating leaf keeps a zero gradient") {
  ParamStore<double> store;
  Param<double>& a = store.add("a", Tensor<double>::from({2}, {1, 2}));
  Param<double>& b = store.add("b", Tensor<double>::from({2}, {3, 4}));
  Tape<double> tp;
  auto va = tp.leaf(a);
  tp.leaf(b);  // never used downstream
  auto loss = mean_all(mul(va, va));
  tp.backward(loss);
  CHECK(a.grad.at(0) == doctest::Approx(1.0));
  CHECK(b.grad.at(0) == 0.0);
  CHECK(b.grad.at(1) == 0.0);
}

TEST_CASE("gather accumulates duplicate rows") {
  ParamStore<double> store;
  Param<double>& e = store.add("emb", Tensor<double>::from({3, 2}, {1, 2, 3, 4, 5, 6}));
  Tape<double> tp;
  auto rows = gather_rows(tp.leaf(e), {1, 1, 2});
  auto loss = sum_all(rows);
  tp.backward(loss);
  CHECK(e.grad.at(1, 0) == doctest::Approx(2.0));
  CHECK(e.grad.at(2, 0) == doctest::Approx(1.0));
  CHECK(e.grad.at(0, 0) == 0.0);
}

TEST_CASE("window ops match a naive per-window loop") {
  Rng rng(23);
  const i64 w = 4, nb = 3, dk = 5;
  Tensor<double> q = rand_tensor({nb * w, dk}, rng);
  Tensor<double> k = rand_tensor({nb * w, dk}, rng);
  Tape<double> tp;
  auto s = window_scores(tp.constant(q), tp.constant(k), w, 0.5);
  for (i64 b = 0; b < nb; ++b)
    for (i64 i = 0; i < w; ++i)
      for (i64 j = 0; j < w; ++j) {
        double dot = 0.0;
        for (i64 c = 0; c < dk; ++c) dot += q.at(b * w + i, c) * k.at(b * w + j, c);
        CHECK(tp.val(s).at(b * w + i, j) == doctest::Approx(0.5 * dot).epsilon(1e-12));
      }

  Tensor<double> a = rand_tensor({nb * w, w}, rng);
  Tensor<double> v = rand_tensor({nb * w, dk}, rng);
  auto mixed = window_mix(tp.constant(a), tp.constant(v), w);
  for (i64 b = 0; b < nb; ++b)
    for (i64 i = 0; i < w; ++i)
      for (i64 c = 0; c < dk; ++c) {
        double acc = 0.0;
        for (i64 j = 0; j < w; ++j) acc += a.at(b * w + i, j) * v.at(b * w + j, c);
        CHECK(tp.val(mixed).at(b * w + i, c) == doctest::Approx(acc).epsilon(1e-12));
      }
}

TEST_CASE("concat and slice round trip") {
  Rng rng(3);
  Tensor<double> a = rand_tensor({3, 2}, rng);
  Tensor<double> b = rand_tensor({3, 4}, rng);
  Tape<double> tp;
  auto cat = concat_cols<double>({tp.constant(a), tp.constant(b)});
  auto back = slice_cols(cat, 2, 6);
  for (i64 r = 0; r < 3; ++r)
    for (i64 c = 0; c < 4; ++c) CHECK(tp.val(back).at(r, c) == b.at(r, c));
}

TEST_CASE("gradients match finite differences per op") {
  Rng rng(101);

  SUBCASE("matmul chain") {
    ParamStore<double> store;
    Param<double>& A = store.add("A", rand_tensor({4, 3}, rng));
    Param<double>& B = store.add("B", rand_tensor({3, 5}, rng));
    Tensor<double> tgt = rand_tensor({4, 5}, rng);
    auto build = [&](Tape<double>& t) { return mse_loss(matmul(t.leaf(A), t.leaf(B)), tgt); };
    CHECK(grad_check(store, build) < 1e-6);
  }

  SUBCASE("matmul_nt") {
    ParamStore<double> store;
    Param<double>& A = store.add("A", rand_tensor({4, 3}, rng));
    Param<double>& B = store.add("B", rand_tensor({5, 3}, rng));
    Tensor<double> tgt = rand_tensor({4, 5}, rng);
    auto build = [&](Tape<double>& t) { return mse_loss(matmul_nt(t.leaf(A), t.leaf(B)), tgt); };
    CHECK(grad_check(store, build) < 1e-6);
  }

  SUBCASE("softmax") {
    ParamStore<double> store;
    Param<double>& X = store.add("X", rand_tensor({4, 6}, rng));
    Tensor<double> tgt = rand_simplex(4, 6, rng);
    auto build = [&](Tape<double>& t) { return mse_loss(softmax_rows(t.leaf(X)), tgt); };
    CHECK(grad_check(store, build) < 1e-6);
  }

  SUBCASE("layernorm") {
    ParamStore<double> store;
    Param<double>& X = store.add("X", rand_tensor({5, 8}, rng));
    Param<double>& G = store.add("G", rand_tensor({8}, rng, 0.5));
    Param<double>& B = store.add("B", rand_tensor({8}, rng, 0.5));
    Tensor<double> tgt = rand_tensor({5, 8}, rng);
    auto build = [&](Tape<double>& t) {
      return mse_loss(layernorm_rows(t.leaf(X), t.leaf(G), t.leaf(B), 1e-5), tgt);
    };
    CHECK(grad_check(store, build) < 1e-6);
  }

  SUBCASE("l2 normalize and cosine") {
    ParamStore<double> store;
    Param<double>& A = store.add("A", rand_tensor({4, 5}, rng));
    Param<double>& B = store.add("B", rand_tensor({4, 5}, rng));
    Tensor<double> tgt = rand_tensor({4}, rng, 0.3);
    auto build = [&](Tape<double>& t) {
      auto an = l2_normalize_rows(t.leaf(A), 1e-8);
      auto c = cosine_rows(an, t.leaf(B), 1e-8);
      return mse_loss(c, tgt);
    };
    CHECK(grad_check(store, build) < 1e-6);
  }

  SUBCASE("relu sigmoid mul add sub affine rowvec") {
    ParamStore<double> store;
    // keep relu inputs away from the kink so finite differences stay clean
    Tensor<double> raw = rand_tensor({4, 6}, rng);
    for (i64 i = 0; i < raw.size(); ++i) {
      const double s = raw.data()[i] >= 0 ? 1.0 : -1.0;
      raw.data()[i] = s * (0.05 + std::abs(raw.data()[i]));
    }
    Param<double>& X = store.add("X", raw);
    Param<double>& Y = store.add("Y", rand_tensor({4, 6}, rng));
    Param<double>& b = store.add("b", rand_tensor({6}, rng));
    Tensor<double> tgt = rand_tensor({4, 6}, rng);
    auto build = [&](Tape<double>& t) {
      auto x = t.leaf(X);
      auto y = t.leaf(Y);
      auto z = add(mul(relu(x), sigmoid(y)), sub(x, y));
      z = add_rowvec(affine(z, 0.7, 0.1), t.leaf(b));
      return mse_loss(z, tgt);
    };
    CHECK(grad_check(store, build) < 1e-6);
  }

  SUBCASE("window scores and mix") {
    ParamStore<double> store;
    Param<double>& Q = store.add("Q", rand_tensor({6, 4}, rng));
    Param<double>& K = store.add("K", rand_tensor({6, 4}, rng));
    Param<double>& V = store.add("V", rand_tensor({6, 4}, rng));
    Tensor<double> tgt = rand_tensor({6, 4}, rng);
    auto build = [&](Tape<double>& t) {
      auto s = window_scores(t.leaf(Q), t.leaf(K), 3, 0.5);
      auto a = softmax_rows(s);
      return mse_loss(window_mix(a, t.leaf(V), 3), tgt);
    };
    CHECK(grad_check(store, build) < 1e-6);
  }

  SUBCASE("time2vec block") {
    ParamStore<double> store;
    Param<double>& W = store.add("omega", rand_tensor({5}, rng, 2.0));
    Param<double>& P = store.add("phi", rand_tensor({5}, rng));
    Tensor<double> tau = rand_tensor({7}, rng, 0.3);
    Tensor<double> tgt = rand_tensor({7, 5}, rng);
    auto build = [&](Tape<double>& t) {
      return mse_loss(time2vec_block(t, tau, t.leaf(W), t.leaf(P)), tgt);
    };
    CHECK(grad_check(store, build) < 1e-6);
  }

  SUBCASE("gather concat slice") {
    ParamStore<double> store;
    Param<double>& E = store.add("E", rand_tensor({5, 4}, rng));
    Tensor<double> tgt = rand_tensor({3, 6}, rng);
    auto build = [&](Tape<double>& t) {
      auto rows = gather_rows(t.leaf(E), {0, 2, 2});
      auto left = slice_cols(rows, 0, 2);
      auto cat = concat_cols<double>({rows, left});
      return mse_loss(cat, tgt);
    };
    CHECK(grad_check(store, build) < 1e-6);
  }

  SUBCASE("cross entropy") {
    ParamStore<double> store;
    Param<double>& X = store.add("X", rand_tensor({5, 3}, rng));
    Param<double>& W = store.add("W", rand_tensor({3, 4}, rng));
    auto build = [&](Tape<double>& t) {
      return softmax_xent_rows(matmul(t.leaf(X), t.leaf(W)), {0, 3, 1, 2, 2});
    };
    CHECK(grad_check(store, build) < 1e-6);
  }

  SUBCASE("kl through softmax") {
    Rng r2(77);
    ParamStore<double> store;
    Param<double>& X = store.add("X", rand_tensor({4, 3}, r2));
    Param<double>& W = store.add("W", rand_tensor({3, 6}, r2));
    Tensor<double> ref = rand_simplex(4, 6, r2);
    auto build = [&](Tape<double>& t) {
      return kl_rows(ref, softmax_rows(matmul(t.leaf(X), t.leaf(W))));
    };
    CHECK(grad_check(store, build) < 1e-6);
  }

  SUBCASE("bce and mse heads") {
    ParamStore<double> store;
    Param<double>& X = store.add("X", rand_tensor({4, 3}, rng));
    Param<double>& W = store.add("W", rand_tensor({3, 5}, rng));
    Tensor<double> y = Tensor<double>::zeros({4, 5});
    for (i64 i = 0; i < y.size(); ++i) y.data()[i] = (i % 3 == 0) ? 1.0 : 0.0;
    auto build = [&](Tape<double>& t) {
      return bce_logits(matmul(t.leaf(X), t.leaf(W)), y);
    };
    CHECK(grad_check(store, build) < 1e-6);
  }
}

TEST_CASE("adam converges on a 1-d quadratic") {
  // f(x) = (x - 3)^2, minimizer x = 3
  ParamStore<double> store;
  Param<double>& x = store.add("x", Tensor<double>::scalar(-4.0));
  Adam<double> opt(store, AdamConfig{.lr = 0.1});
  for (int i = 0; i < 200; ++i) {
    store.zero_grad();
    Tape<double> tp;
    auto v = tp.leaf(x);
    auto loss = mse_loss(v, Tensor<double>::scalar(3.0));
    tp.backward(loss);
    opt.step();
  }
  CHECK(x.value.at(0) == doctest::Approx(3.0).epsilon(1e-2));
}

TEST_CASE("adam decreases loss on a small linear regression") {
  Rng rng(9);
  Tensor<double> X = rand_tensor({16, 3}, rng);
  Tensor<double> wtrue = rand_tensor({3, 1}, rng);
  Tensor<double> y = matmul_plain(X, wtrue);
  ParamStore<double> store;
  Param<double>& W = store.add("W", rand_tensor({3, 1}, rng, 0.1));
  Adam<double> opt(store, AdamConfig{.lr = 0.05});
  double prev = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 5; ++i) {
    store.zero_grad();
    Tape<double> tp;
    auto loss = mse_loss(matmul(tp.constant(X), tp.leaf(W)), y);
    const double cur = tp.val(loss).at(0);
    CHECK(cur < prev);
    prev = cur;
    tp.backward(loss);
    opt.step();
  }
}

TEST_CASE("adam names the parameter with a non-finite gradient") {
  ParamStore<double> store;
  Param<double>& x = store.add("bad_param", Tensor<double>::scalar(1.0));
  x.grad = Tensor<double>::scalar(std::numeric_limits<double>::quiet_NaN());
  Adam<double> opt(store, AdamConfig{});
  try {
    opt.step();
    CHECK(false);
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("bad_param") != std::string::npos);
  }
}

TEST_CASE("global norm clipping") {
  ParamStore<double> store;
  Param<double>& a = store.add("a", Tensor<double>::zeros({3}));
  a.grad = Tensor<double>::from({3}, {3.0, 4.0, 0.0});
  const double before = clip_global_norm(store, 1.0);
  CHECK(before == doctest::Approx(5.0));
  CHECK(global_grad_norm(store) == doctest::Approx(1.0).epsilon(1e-9));
  // already small: untouched
  a.grad = Tensor<double>::from({3}, {0.1, 0.0, 0.0});
  clip_global_norm(store, 1.0);
  CHECK(a.grad.at(0) == doctest::Approx(0.1));
}

TEST_CASE("checkpoint round trip restores exact bytes") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "mepoi_ckpt_test";
  fs::remove_all(dir);

  Rng rng(31);
  ParamStore<double> store;
  store.add("enc.w", rand_tensor({4, 3}, rng));
  store.add("enc.b", rand_tensor({3}, rng));
  Adam<double> opt(store, AdamConfig{.lr = 0.01});
  // take a step so optimizer state is nontrivial
  store.at(0).grad = rand_tensor({4, 3}, rng);
  store.at(1).grad = rand_tensor({3}, rng);
  opt.step();
  save_checkpoint(dir, store, &opt);

  std::vector<Tensor<double>> saved;
  for (std::size_t i = 0; i < store.size(); ++i) saved.push_back(store.at(i).value.clone());

  // perturb, load, compare bit for bit
  for (std::size_t i = 0; i < store.size(); ++i)
    for (i64 j = 0; j < store.at(i).value.size(); ++j) store.at(i).value.data()[j] += 1.0;
  Adam<double> opt2(store, AdamConfig{.lr = 0.01});
  load_checkpoint(dir, store, &opt2);
  for (std::size_t i = 0; i < store.size(); ++i)
    CHECK(std::memcmp(store.at(i).value.data(), saved[i].data(),
                      sizeof(double) * static_cast<std::size_t>(saved[i].size())) == 0);
  CHECK(opt2.step_count() == 1);

  // corrupted manifest name must be reported
  ParamStore<double> other;
  other.add("different", Tensor<double>::zeros({4, 3}));
  CHECK_THROWS(load_checkpoint(dir, other));

  // dtype mismatch is rejected
  ParamStore<float> fstore;
  fstore.add("enc.w", Tensor<float>::zeros({4, 3}));
  fstore.add("enc.b", Tensor<float>::zeros({3}));
  CHECK_THROWS(load_checkpoint(dir, fstore));

  fs::remove_all(dir);
}

TEST_CASE("parallel matmul matches single threaded") {
  Rng rng(41);
  Tensor<float> a = Tensor<float>::zeros({37, 19});
  Tensor<float> b = Tensor<float>::zeros({19, 23});
  for (i64 i = 0; i < a.size(); ++i) a.data()[i] = static_cast<float>(rng.normal());
  for (i64 i = 0; i < b.size(); ++i) b.data()[i] = static_cast<float>(rng.normal());
  set_thread_count(1);
  Tensor<float> c1 = matmul_plain(a, b);
  set_thread_count(4);
  Tensor<float> c4 = matmul_plain(a, b);
  set_thread_count(1);
  for (i64 i = 0; i < c1.size(); ++i) CHECK(c1.data()[i] == doctest::Approx(c4.data()[i]).epsilon(1e-5));
}

}  // TEST_SUITE
