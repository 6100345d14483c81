#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numbers>
#include <thread>

#include "mmdino/optim.hpp"
#include "mmdino/queue.hpp"

using namespace mmdino;

namespace {

// emb (decay), enc (decay), enc.bias (no decay), head (decay)
ParamLayout toy_layout() {
  ParamLayout L;
  L.add("emb", {2, 2}, ParamGroup::embedding, true);
  L.add("enc", {3}, ParamGroup::encoder, true);
  L.add("enc.bias", {2}, ParamGroup::encoder, false);
  L.add("head", {2}, ParamGroup::head, true);
  return L;
}

ParamVector filled(size_t n, double start, double step) {
  ParamVector v(n);
  for (size_t i = 0; i < n; ++i) v[i] = static_cast<Real>(start + step * static_cast<double>(i));
  return v;
}

}  // namespace

TEST_SUITE("optim") {
  TEST_CASE("learning-rate schedule closed form") {
    const double base = 1e-3, lo = 1e-5;
    const int W = 10, T = 100;
    for (int t = 0; t < T; ++t) {
      const double expect = t < W ? base * (t + 1) / W
                                  : lo + (base - lo) * (1 + std::cos(std::numbers::pi * (t - W) / double(T - W))) / 2;
      CHECK(std::abs(lr_at(t, T, W, base, lo) - expect) <= 1e-9);
    }
    CHECK(lr_at(W - 1, T, W, base, lo) == doctest::Approx(base));
    CHECK(lr_at(W, T, W, base, lo) == doctest::Approx(base));
    CHECK(lr_at(T, T, W, base, lo) == doctest::Approx(lo));
    CHECK(lr_at(3, 5, 0, base, lo) > lo);
  }

  TEST_CASE("momentum and temperature schedules") {
    CHECK(ema_momentum_at(0, 100, 0.992, 1.0) == doctest::Approx(0.992));
    CHECK(ema_momentum_at(50, 100, 0.992, 1.0) == doctest::Approx(0.996));
    CHECK(ema_momentum_at(100, 100, 0.992, 1.0) == doctest::Approx(1.0));
    for (int t = 1; t <= 100; ++t) CHECK(ema_momentum_at(t, 100, 0.992, 1.0) >= ema_momentum_at(t - 1, 100, 0.992, 1.0));
    CHECK(teacher_temp_at(0, 30, 0.04, 0.07) == doctest::Approx(0.04));
    CHECK(teacher_temp_at(15, 30, 0.04, 0.07) == doctest::Approx(0.055));
    CHECK(teacher_temp_at(30, 30, 0.04, 0.07) == doctest::Approx(0.07));
    CHECK(teacher_temp_at(500, 30, 0.04, 0.07) == doctest::Approx(0.07));
  }

  TEST_CASE("first AdamW step moves every coordinate by lr") {
    // After one step m_hat = g and v_hat = g^2, so the update is lr * sign(g)
    // (up to eps) plus decoupled decay.
    const auto L = toy_layout();
    auto p = filled(L.total(), 0.5, 0.1);
    const auto p0 = p;
    auto g = filled(L.total(), -0.2, 0.05);
    g[5] = 0.0;
    auto st = AdamWState::zeros(L);
    AdamWConfig cfg;
    cfg.grad_clip = 0;
    const double lr = 0.01;
    adamw_step(L, p, g, st, lr, cfg, {true, true, true});
    for (const auto& t : L.tensors())
      for (size_t i = t.offset; i < t.offset + t.size; ++i) {
        const double wd = t.decay ? cfg.weight_decay : 0.0;
        const double gi = g[i];
        const double step = gi == 0 ? 0.0 : gi / (std::abs(gi) + cfg.eps);
        CHECK(p[i] == doctest::Approx(p0[i] - lr * (step + wd * p0[i])).epsilon(1e-6));
        CHECK(st.m[i] == doctest::Approx(0.1 * gi));
        CHECK(st.v[i] == doctest::Approx(0.001 * gi * gi));
      }
    for (auto s : st.steps) CHECK(s == 1);
  }

  TEST_CASE("disabled groups are untouched bit for bit") {
    const auto L = toy_layout();
    auto p = filled(L.total(), 0.3, -0.07);
    auto g = filled(L.total(), 1.0, 0.5);
    auto st = AdamWState::zeros(L);
    const auto p0 = p;
    adamw_step(L, p, g, st, 0.1, {}, {false, false, true});
    const auto& head = L.info(L.find("head"));
    for (size_t i = 0; i < L.total(); ++i) {
      const bool in_head = i >= head.offset && i < head.offset + head.size;
      if (in_head) {
        CHECK(p[i] != p0[i]);
      } else {
        CHECK(std::memcmp(&p[i], &p0[i], sizeof(Real)) == 0);
        CHECK(st.m[i] == 0);
        CHECK(st.v[i] == 0);
      }
    }
    CHECK(st.steps[L.find("head")] == 1);
    CHECK(st.steps[L.find("emb")] == 0);
    // a group that joins later starts its own bias correction
    adamw_step(L, p, g, st, 0.1, {}, {true, true, true});
    CHECK(st.steps[L.find("head")] == 2);
    CHECK(st.steps[L.find("emb")] == 1);
  }

  TEST_CASE("global-norm clipping") {
    const auto L = toy_layout();
    ParamVector g(L.total(), 0);
    g[0] = 3, g[1] = 4;  // norm 5 in the embedding group
    const auto& head = L.info(L.find("head"));
    g[head.offset] = 100;  // excluded when the head group is off
    auto p = ParamVector(L.total(), 0);
    auto st = AdamWState::zeros(L);
    AdamWConfig cfg;
    cfg.grad_clip = 2.5;
    const auto stats = adamw_step(L, p, g, st, 0.0, cfg, {true, true, false});
    CHECK(stats.grad_norm == doctest::Approx(5.0));
    CHECK(stats.clip_scale == doctest::Approx(0.5));
    CHECK(st.m[0] == doctest::Approx(0.1 * 1.5));
    CHECK(group_grad_norm(L, g, ParamGroup::head) == doctest::Approx(100));
    cfg.grad_clip = 10;
    auto st2 = AdamWState::zeros(L);
    CHECK(adamw_step(L, p, g, st2, 0.0, cfg, {true, true, false}).clip_scale == 1.0);
  }

  TEST_CASE("zero gradient only decays flagged tensors") {
    const auto L = toy_layout();
    auto p = ParamVector(L.total(), 1.0f);
    const ParamVector g(L.total(), 0);
    auto st = AdamWState::zeros(L);
    adamw_step(L, p, g, st, 0.5, {}, {true, true, true});
    const auto& bias = L.info(L.find("enc.bias"));
    for (const auto& t : L.tensors())
      for (size_t i = t.offset; i < t.offset + t.size; ++i)
        CHECK(p[i] == doctest::Approx(t.offset == bias.offset ? 1.0 : 1.0 - 0.5 * 0.04));
  }

  TEST_CASE("state shape is checked") {
    const auto L = toy_layout();
    auto p = ParamVector(L.total(), 0);
    AdamWState st;
    CHECK_THROWS_AS(adamw_step(L, p, p, st, 0.1, {}, {true, true, true}), ShapeError);
  }
}

TEST_SUITE("queue") {
  TEST_CASE("FIFO order, capacity and close") {
    BoundedQueue<int> q(2);
    CHECK(q.capacity() == 2);
    CHECK(q.push(1));
    CHECK(q.push(2));
    CHECK(q.size() == 2);
    std::thread producer([&] {
      for (int i = 3; i <= 6; ++i) q.push(i);
      q.close();
    });
    std::vector<int> got;
    while (auto v = q.pop()) {
      CHECK(q.size() <= 2);
      got.push_back(*v);
    }
    producer.join();
    CHECK(got == std::vector<int>{1, 2, 3, 4, 5, 6});
    CHECK_FALSE(q.push(7));
    CHECK_FALSE(q.pop().has_value());
  }
}
