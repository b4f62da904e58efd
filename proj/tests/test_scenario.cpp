#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "audiocil/scenario.hpp"
#include "support.hpp"

#include <set>

using namespace audiocil;

namespace {

std::vector<Label> labels(std::size_t n) {
  std::vector<Label> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("class-" + std::to_string(i));
  return out;
}

Dataset tagged_dataset(std::size_t classes, std::size_t per_class) {
  std::vector<DatasetItem> items;
  for (std::size_t k = 0; k < per_class; ++k) {
    for (std::size_t c = 0; c < classes; ++c) {
      items.push_back({"c" + std::to_string(c) + "-" + std::to_string(k), "class-" + std::to_string(c), {}, nullptr});
    }
  }
  return Dataset("tagged", Split::kTrain, std::move(items));
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode{};
}

}  // namespace

TEST_CASE("LS-100 style split: 100 classes, init 60, increment 5") {
  ScenarioSpec spec{100, 60, 5, 1993};
  const auto s = build_schedule(spec, labels(100));
  CHECK(s.num_tasks() == 9);
  CHECK(s.task_label_spaces()[0].size() == 60);
  for (std::size_t i = 1; i < 9; ++i) CHECK(s.task_label_spaces()[i].size() == 5);
  CHECK(s.classes_seen(8) == 100);
}

TEST_CASE("schedule shape for init 4 increment 2 over 10 classes") {
  const auto s = build_schedule({10, 4, 2, 3}, labels(10));
  REQUIRE(s.num_tasks() == 4);
  CHECK(s.classes_seen(0) == 4);
  CHECK(s.classes_seen(3) == 10);
  CHECK(s.task_offset(2) == 6);
  for (std::size_t i = 0; i < 4; ++i) {
    for (const auto& l : s.task_label_spaces()[i]) {
      CHECK(s.task_of(l) == i);
      const auto k = s.class_index(l);
      CHECK(k >= s.task_offset(i));
      CHECK(k < s.classes_seen(i));
    }
  }
}

TEST_CASE("init_cls equal to num_classes gives one task") {
  const auto s = build_schedule({6, 6, 3, 1}, labels(6));
  CHECK(s.num_tasks() == 1);
}

TEST_CASE("spec validation errors are distinct") {
  CHECK(code_of([] { build_schedule({10, 4, 4, 1}, labels(10)); }) == ErrorCode::kDivisibility);
  CHECK(code_of([] { build_schedule({10, 12, 2, 1}, labels(10)); }) == ErrorCode::kInitClsTooLarge);
  CHECK(code_of([] { build_schedule({10, 0, 2, 1}, labels(10)); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([] { build_schedule({10, 4, 0, 1}, labels(10)); }) == ErrorCode::kInvalidArgument);
  auto dup = labels(10);
  dup[3] = dup[4];
  CHECK(code_of([&] { build_schedule({10, 4, 2, 1}, dup); }) == ErrorCode::kDuplicateLabel);
  CHECK(code_of([] { build_schedule({10, 4, 2, 1}, labels(8)); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("property: random specs give disjoint covering seed-deterministic label spaces") {
  Rng rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t inc = 1 + rng.index(5);
    const std::size_t tasks = rng.index(6);
    const std::size_t init = 1 + rng.index(10);
    const std::size_t n = init + tasks * inc;
    const std::uint64_t seed = rng.next();
    const ScenarioSpec spec{n, init, inc, seed};
    const auto a = build_schedule(spec, labels(n));
    const auto b = build_schedule(spec, labels(n));
    CHECK(a.class_order() == b.class_order());
    CHECK(a.num_tasks() == tasks + 1);
    std::set<Label> all;
    std::size_t total = 0;
    for (const auto& space : a.task_label_spaces()) {
      all.insert(space.begin(), space.end());
      total += space.size();
    }
    CHECK(total == n);
    CHECK(all.size() == n);
  }
}

TEST_CASE("different seeds usually give different orders") {
  const auto a = build_schedule({20, 10, 5, 1}, labels(20));
  const auto b = build_schedule({20, 10, 5, 2}, labels(20));
  CHECK(a.class_order() != b.class_order());
}

TEST_CASE("task data and cumulative test data follow the label spaces") {
  const auto ds = tagged_dataset(10, 3);
  const auto s = build_schedule({10, 4, 2, 5}, ds.class_set());
  for (std::size_t i = 0; i < s.num_tasks(); ++i) {
    const auto t = task_data(s, i, ds);
    CHECK(t.size() == s.task_size(i) * 3);
    for (const auto& r : t.samples) CHECK(s.task_of(r.label) == i);
    const auto c = cumulative_test_data(s, i, ds);
    CHECK(c.size() == s.classes_seen(i) * 3);
    CHECK(c.warnings.empty());
  }
  CHECK_THROWS_AS(task_data(s, 4, ds), Error);
}

TEST_CASE("missing test class produces a warning, not an error") {
  std::vector<DatasetItem> items;
  for (std::size_t c = 0; c < 9; ++c) items.push_back({"x" + std::to_string(c), "class-" + std::to_string(c), {}, nullptr});
  Dataset partial("partial", Split::kTest, items);
  const auto s = build_schedule({10, 4, 2, 5}, labels(10));
  const auto c = cumulative_test_data(s, 3, partial);
  CHECK(c.size() == 9);
  REQUIRE(c.warnings.size() == 1);
  CHECK(c.warnings[0].find("class-9") != std::string::npos);
}

TEST_CASE("few-shot sampling keeps exactly N x K samples, deterministically") {
  const auto ds = tagged_dataset(10, 8);
  const auto s = build_schedule({10, 4, 2, 5, true, 2, 3}, ds.class_set());
  const auto t = task_data(s, 2, ds);
  const auto a = sample_few_shot(t, 2, 3, 99);
  const auto b = sample_few_shot(t, 2, 3, 99);
  CHECK(a.samples == b.samples);
  CHECK(a.size() == 6);
  std::map<Label, int> counts;
  for (const auto& r : a.samples) ++counts[r.label];
  CHECK(counts.size() == 2);
  for (const auto& [l, n] : counts) CHECK(n == 3);
  const auto c = sample_few_shot(t, 2, 3, 100);
  CHECK(c.size() == 6);
}

TEST_CASE("few-shot sampling names the class without enough samples") {
  const auto ds = tagged_dataset(10, 2);
  const auto s = build_schedule({10, 4, 2, 5}, ds.class_set());
  const auto t = task_data(s, 1, ds);
  try {
    sample_few_shot(t, 2, 3, 1);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInsufficientData);
    CHECK(std::string(e.what()).find(t.samples[0].label) != std::string::npos);
  }
}

TEST_CASE("few-shot spec requires n_way = increment") {
  CHECK(code_of([] { build_schedule({10, 4, 2, 5, true, 3, 5}, labels(10)); }) == ErrorCode::kInvalidArgument);
}
