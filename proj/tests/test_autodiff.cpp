// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode tape: every primitive checked against central finite
// differences, Adam against its closed form, and the checkpoint container
// against exact round trips.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "divkd/autodiff.hpp"
#include "divkd/common.hpp"

using namespace divkd;

namespace {

double run_loss(ParamStore& store, const std::function<Val(Tape&)>& forward) {
  (void)store;
  Tape t;
  Val loss = forward(t);
  return t.value(loss)(0, 0);
}

// Central finite differences over every entry of every parameter, compared
// relatively against the tape's analytic gradient.
void check_gradients(ParamStore& store,
                     const std::function<Val(Tape&)>& forward,
                     double tol = 1e-4) {
  store.zero_grads();
  {
    Tape t;
    Val loss = forward(t);
    t.backward(loss);
  }
  std::map<std::string, Matrix> analytic;
  for (const Parameter* p : const_cast<const ParamStore&>(store).all()) {
    analytic[p->name] = p->grad;
  }
  for (Parameter* p : store.all()) {
    for (int r = 0; r < p->value.rows(); ++r) {
      for (int c = 0; c < p->value.cols(); ++c) {
        double x = p->value(r, c);
        double h = 1e-5 * std::max(1.0, std::fabs(x));
        p->value(r, c) = x + h;
        double up = run_loss(store, forward);
        p->value(r, c) = x - h;
        double down = run_loss(store, forward);
        p->value(r, c) = x;
        double fd = (up - down) / (2.0 * h);
        double an = analytic[p->name](r, c);
        double err = std::fabs(fd - an) / std::max({1.0, std::fabs(fd),
                                                    std::fabs(an)});
        CAPTURE(p->name);
        CAPTURE(r);
        CAPTURE(c);
        CHECK(err <= tol);
      }
    }
  }
  store.zero_grads();
}

bool mat_eq(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         (a.array() == b.array()).all();
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("divkd-autodiff-test-" + std::to_string(::getpid()) + "-" +
            std::to_string(counter++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
};

}  // namespace

TEST_CASE("param store: creation, lookup, ordering") {
  ParamStore store;
  store.create("b", 2, 3);
  store.create("a", 1, 1);
  store.create_uniform("c", 4, 2, 0.5, 7);
  CHECK(store.size() == 3);
  CHECK(store.has("a"));
  CHECK(!store.has("zz"));
  CHECK_THROWS_AS(store.create("a", 1, 1), GraphError);
  CHECK_THROWS_AS(store.get("zz"), GraphError);
  CHECK_THROWS_AS(store.create("neg", 0, 3), ShapeError);

  auto all = store.all();
  REQUIRE(all.size() == 3);
  CHECK(all[0]->name == "a");
  CHECK(all[1]->name == "b");
  CHECK(all[2]->name == "c");

  CHECK(store.get("b").value.isZero());
  const Matrix& c = store.get("c").value;
  bool nonzero = false;
  for (int r = 0; r < c.rows(); ++r) {
    for (int j = 0; j < c.cols(); ++j) {
      CHECK(std::fabs(c(r, j)) <= 0.5);
      nonzero = nonzero || c(r, j) != 0.0;
    }
  }
  CHECK(nonzero);
}

TEST_CASE("create_uniform depends only on (seed, name)") {
  ParamStore s1, s2;
  s1.create_uniform("w1", 3, 4, 0.2, 42);
  s1.create_uniform("w2", 2, 2, 0.2, 42);
  // reversed creation order
  s2.create_uniform("w2", 2, 2, 0.2, 42);
  s2.create_uniform("w1", 3, 4, 0.2, 42);
  CHECK(mat_eq(s1.get("w1").value, s2.get("w1").value));
  CHECK(mat_eq(s1.get("w2").value, s2.get("w2").value));

  ParamStore s3;
  s3.create_uniform("w1", 3, 4, 0.2, 43);
  CHECK(!mat_eq(s1.get("w1").value, s3.get("w1").value));
}

TEST_CASE("gradients: matmul / add / bias / sub / elem_mul") {
  ParamStore store;
  store.create_uniform("A", 3, 4, 0.8, 1);
  store.create_uniform("B", 4, 2, 0.8, 2);
  store.create_uniform("bias", 1, 2, 0.8, 3);
  store.create_uniform("C", 3, 2, 0.8, 4);
  check_gradients(store, [&](Tape& t) {
    Val a = t.param(store.get("A"));
    Val b = t.param(store.get("B"));
    Val prod = t.matmul(a, b);                       // 3x2
    Val biased = t.add(prod, t.param(store.get("bias")));
    Val c = t.param(store.get("C"));
    Val mixed = t.elem_mul(t.sub(biased, c), t.add(biased, c));
    return t.sum(mixed);
  });
}

TEST_CASE("gradients: concat / slice / transpose / repeat") {
  ParamStore store;
  store.create_uniform("X", 2, 3, 0.9, 5);
  store.create_uniform("Y", 2, 3, 0.9, 6);
  store.create_uniform("row", 1, 6, 0.9, 7);
  check_gradients(store, [&](Tape& t) {
    Val x = t.param(store.get("X"));
    Val y = t.param(store.get("Y"));
    Val stacked = t.concat_rows({x, y});        // 4x3
    Val side = t.concat_cols({x, y});           // 2x6
    Val cut = t.slice_rows(stacked, 1, 2);      // 2x3
    Val cols = t.slice_cols(side, 2, 3);        // 2x3
    Val tr = t.transpose(t.slice_cols(cut, 0, 2));  // 2x2, indices crossed
    Val rep = t.repeat_rows(t.param(store.get("row")), 2);  // 2x6
    Val joined = t.concat_cols({cols, tr});     // 2x5
    Val padded = t.concat_cols({joined, t.input(Matrix::Ones(2, 1))});  // 2x6
    return t.sum(t.elem_mul(padded, rep));
  });
}

TEST_CASE("gradients: activations and scalar maps") {
  ParamStore store;
  // The offset keeps relu, log and clamp away from their kinks and poles.
  Parameter& x = store.create_uniform("X", 2, 3, 0.4, 8);
  x.value.array() += 0.5;  // strictly positive
  check_gradients(store, [&](Tape& t) {
    Val v = t.param(store.get("X"));
    Val s = t.sigmoid(v);
    Val th = t.tanh(v);
    Val r = t.relu(t.add_scalar(v, 0.2));
    Val e = t.exp(t.scale(v, 0.3));
    Val lg = t.log(t.add_scalar(v, 1.0));
    Val n = t.neg(v);
    Val cl = t.clamp(v, -0.25, 0.65);  // some entries pinned, some free
    Val sum = t.add(t.add(s, th), t.add(r, e));
    Val sum2 = t.add(t.add(lg, n), cl);
    return t.mean(t.elem_mul(sum, sum2));
  });
}

TEST_CASE("clamp pins gradient to zero outside the range") {
  ParamStore store;
  Parameter& p = store.create("X", 1, 3);
  p.value << -2.0, 0.0, 2.0;
  Tape t;
  Val loss = t.sum(t.clamp(t.param(p), -1.0, 1.0));
  t.backward(loss);
  CHECK(p.grad(0, 0) == 0.0);
  CHECK(p.grad(0, 1) == 1.0);
  CHECK(p.grad(0, 2) == 0.0);
}

TEST_CASE("gradients: softmax, log-softmax, pick") {
  ParamStore store;
  store.create_uniform("L", 3, 5, 1.5, 9);
  check_gradients(store, [&](Tape& t) {
    Val l = t.param(store.get("L"));
    Val sm = t.softmax_row(l);
    Val lsm = t.log_softmax_row(l);
    Val picked = t.pick(lsm, 1, 3);
    return t.add(t.add(t.sum(t.elem_mul(sm, sm)), picked),
                 t.mean(lsm));
  });
}

TEST_CASE("softmax rows sum to one and log_softmax matches log(softmax)") {
  ParamStore store;
  store.create_uniform("L", 4, 6, 3.0, 10);
  Tape t;
  Val l = t.param(store.get("L"));
  Val sm = t.softmax_row(l);
  Val lsm = t.log_softmax_row(l);
  const Matrix& smv = t.value(sm);
  const Matrix& lsmv = t.value(lsm);
  for (int r = 0; r < smv.rows(); ++r) {
    CHECK(smv.row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
    for (int c = 0; c < smv.cols(); ++c) {
      CHECK(lsmv(r, c) == doctest::Approx(std::log(smv(r, c))).epsilon(1e-10));
    }
  }
}

TEST_CASE("sigmoid gradient at zero is exactly one quarter") {
  ParamStore store;
  store.create("x", 1, 1);  // zero-initialized
  Tape t;
  Val loss = t.sigmoid(t.param(store.get("x")));
  CHECK(t.value(loss)(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  t.backward(loss);
  CHECK(store.get("x").grad(0, 0) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("gradients: composite gated-recurrent step") {
  // A handwritten single GRU step; this is the shape of everything the
  // encoder and recognition network do.
  ParamStore store;
  int e = 3, d = 4;
  store.create_uniform("W", e, 3 * d, 0.6, 11);
  store.create_uniform("U", d, 3 * d, 0.6, 12);
  store.create_uniform("b", 1, 3 * d, 0.6, 13);
  store.create_uniform("x", 1, e, 0.6, 14);
  store.create_uniform("h", 1, d, 0.6, 15);
  check_gradients(store, [&](Tape& t) {
    Val gates_x = t.add(t.matmul(t.param(store.get("x")),
                                 t.param(store.get("W"))),
                        t.param(store.get("b")));
    Val h = t.param(store.get("h"));
    Val gates_h = t.matmul(h, t.param(store.get("U")));
    Val rz_x = t.slice_cols(gates_x, 0, 2 * d);
    Val rz_h = t.slice_cols(gates_h, 0, 2 * d);
    Val rz = t.sigmoid(t.add(rz_x, rz_h));
    Val r = t.slice_cols(rz, 0, d);
    Val z = t.slice_cols(rz, d, d);
    Val cand = t.tanh(t.add(t.slice_cols(gates_x, 2 * d, d),
                            t.elem_mul(r, t.slice_cols(gates_h, 2 * d, d))));
    Val out = t.add(cand, t.elem_mul(z, t.sub(h, cand)));
    return t.mean(t.elem_mul(out, out));
  });
}

TEST_CASE("tape misuse is rejected") {
  ParamStore store;
  store.create_uniform("A", 2, 2, 0.5, 16);

  SUBCASE("double backward") {
    Tape t;
    Val loss = t.sum(t.param(store.get("A")));
    t.backward(loss);
    CHECK_THROWS_AS(t.backward(loss), GraphError);
  }
  SUBCASE("non-scalar loss") {
    Tape t;
    Val v = t.param(store.get("A"));
    CHECK_THROWS_AS(t.backward(v), GraphError);
  }
  SUBCASE("foreign value") {
    Tape t1, t2;
    Val v = t1.param(store.get("A"));
    (void)t2.constant(1.0);
    CHECK_THROWS_AS(t2.value(Val{v.idx + 50}), GraphError);
  }
  SUBCASE("shape mismatches") {
    Tape t;
    Val a = t.input(Matrix::Ones(2, 3));
    Val b = t.input(Matrix::Ones(2, 2));
    CHECK_THROWS_AS(t.matmul(a, b), ShapeError);
    CHECK_THROWS_AS(t.add(a, b), ShapeError);
    CHECK_THROWS_AS(t.elem_mul(a, b), ShapeError);
  }
  store.zero_grads();
}

TEST_CASE("gradient accumulates across backward passes until zeroed") {
  ParamStore store;
  store.create_uniform("A", 2, 2, 0.5, 17);
  auto run = [&]() {
    Tape t;
    t.backward(t.sum(t.param(store.get("A"))));
  };
  store.zero_grads();
  run();
  Matrix once = store.get("A").grad;
  run();
  CHECK(mat_eq(store.get("A").grad, (once * 2.0).eval()));
  store.zero_grads();
  CHECK(store.get("A").grad.isZero());
}

TEST_CASE("adam first and second steps match the closed form") {
  ParamStore store;
  Parameter& p = store.create("x", 1, 1);
  p.value(0, 0) = 0.7;
  const double g = 2.0, lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;

  auto apply_grad = [&]() {
    Tape t;
    t.backward(t.scale(t.param(p), g));  // dL/dx = g exactly
  };

  apply_grad();
  adam_step(store, lr);
  double m1 = (1 - b1) * g;
  double v1 = (1 - b2) * g * g;
  double mhat1 = m1 / (1 - b1);
  double vhat1 = v1 / (1 - b2);
  double x1 = 0.7 - lr * mhat1 / (std::sqrt(vhat1) + eps);
  CHECK(store.step() == 1);
  CHECK(p.value(0, 0) == doctest::Approx(x1).epsilon(1e-15));
  CHECK(p.m(0, 0) == doctest::Approx(m1).epsilon(1e-15));
  CHECK(p.v(0, 0) == doctest::Approx(v1).epsilon(1e-15));
  CHECK(p.grad(0, 0) == 0.0);  // zeroed by the step

  apply_grad();
  adam_step(store, lr);
  double m2 = b1 * m1 + (1 - b1) * g;
  double v2 = b2 * v1 + (1 - b2) * g * g;
  double mhat2 = m2 / (1 - b1 * b1);
  double vhat2 = v2 / (1 - b2 * b2);
  double x2 = x1 - lr * mhat2 / (std::sqrt(vhat2) + eps);
  CHECK(store.step() == 2);
  CHECK(p.value(0, 0) == doctest::Approx(x2).epsilon(1e-15));
}

TEST_CASE("checkpoint round trip preserves everything") {
  TempDir tmp;
  ParamStore store;
  store.create_uniform("enc.W", 3, 6, 0.7, 21);
  store.create_uniform("dec.b", 1, 6, 0.7, 21);
  store.set_seed(21);
  store.set_config_hash("0123456789abcdef");
  // Give the optimizer state something nontrivial.
  {
    Tape t;
    t.backward(t.sum(t.elem_mul(t.param(store.get("enc.W")),
                                t.param(store.get("enc.W")))));
  }
  adam_step(store, 0.01);

  std::string path = tmp.file("model.ckpt");
  store.save(path);

  SUBCASE("static load reconstructs the store") {
    ParamStore back = ParamStore::load(path);
    CHECK(back.size() == store.size());
    CHECK(back.step() == store.step());
    CHECK(back.seed() == store.seed());
    CHECK(back.config_hash() == store.config_hash());
    CHECK(mat_eq(back.get("enc.W").value, store.get("enc.W").value));
    CHECK(mat_eq(back.get("enc.W").m, store.get("enc.W").m));
    CHECK(mat_eq(back.get("enc.W").v, store.get("enc.W").v));
    CHECK(mat_eq(back.get("dec.b").value, store.get("dec.b").value));
    // Re-saving writes identical bytes.
    std::string path2 = tmp.file("model2.ckpt");
    back.save(path2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)),
                   std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)),
                   std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
    CHECK(!s1.empty());
  }
  SUBCASE("load_into demands identical names and shapes") {
    ParamStore other;
    other.create("enc.W", 3, 6);
    other.create("dec.b", 1, 6);
    CHECK_NOTHROW(other.load_into(path));
    CHECK(mat_eq(other.get("enc.W").value, store.get("enc.W").value));

    ParamStore wrong_shape;
    wrong_shape.create("enc.W", 3, 5);
    wrong_shape.create("dec.b", 1, 6);
    CHECK_THROWS_AS(wrong_shape.load_into(path), CheckpointError);

    ParamStore wrong_names;
    wrong_names.create("enc.W", 3, 6);
    CHECK_THROWS_AS(wrong_names.load_into(path), CheckpointError);
  }
  SUBCASE("bad files") {
    CHECK_THROWS_AS(ParamStore::load(tmp.file("missing.ckpt")), FileError);
    std::string junk = tmp.file("junk.ckpt");
    std::ofstream out(junk, std::ios::binary);
    out << "NOTACKPT furthermore";
    out.close();
    CHECK_THROWS_AS(ParamStore::load(junk), CheckpointError);
  }
}
