#include <random>
#include <set>

#include "icsml/buffer.hpp"
#include "test_util.hpp"

using namespace icsml;

TEST(Arena, BumpAllocationFromZero) {
  Arena arena(10);
  const auto a = allocate_view(arena, {4});
  EXPECT_EQ(a.offset, 0u);
  EXPECT_EQ(a.length, 4u);
  ASSERT_EQ(a.dimensions_num, 1u);
  EXPECT_EQ(a.dimensions[0], 4u);

  const auto b = allocate_view(arena, {2, 3});
  EXPECT_EQ(b.offset, 4u);
  EXPECT_EQ(b.length, 6u);
  EXPECT_EQ(b.dimensions_num, 2u);
  EXPECT_EQ(arena.high_water(), 10u);

  EXPECT_ICSML_ERROR(allocate_view(arena, {1}), ErrorCode::CapacityExceeded);
  EXPECT_EQ(arena.high_water(), 10u);
}

TEST(Arena, ViewsAreZeroInitialized) {
  Arena arena(8);
  const auto v = arena.allocate({8});
  for (float x : arena.span(v)) EXPECT_EQ(x, 0.0f);
}

TEST(Arena, RejectsZeroExtentAndTooManyDims) {
  Arena arena(100);
  EXPECT_ICSML_ERROR(arena.allocate({0}), ErrorCode::ShapeMismatch);
  EXPECT_ICSML_ERROR(arena.allocate({1, 1, 1, 1, 1}), ErrorCode::ShapeMismatch);
  EXPECT_EQ(arena.high_water(), 0u);
}

TEST(Arena, RandomAllocationsAreDisjoint) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Arena arena(4096);
    std::vector<BufferView> views;
    std::uniform_int_distribution<std::uint32_t> extent(1, 9);
    std::uniform_int_distribution<int> ndims(1, 4);
    for (;;) {
      std::vector<std::uint32_t> dims(static_cast<std::size_t>(ndims(rng)));
      for (auto& d : dims) d = extent(rng);
      try {
        views.push_back(arena.allocate(std::span<const std::uint32_t>(dims)));
      } catch (const Error& e) {
        ASSERT_EQ(e.code(), ErrorCode::CapacityExceeded);
        break;
      }
      ASSERT_LE(arena.high_water(), arena.capacity());
    }
    for (std::size_t i = 0; i < views.size(); ++i) {
      std::size_t product = 1;
      for (auto d : views[i].dims()) product *= d;
      EXPECT_EQ(product, views[i].length);
      for (std::size_t j = i + 1; j < views.size(); ++j) {
        const bool disjoint = views[i].end() <= views[j].offset || views[j].end() <= views[i].offset;
        EXPECT_TRUE(disjoint) << "views " << i << " and " << j << " overlap";
      }
    }
  }
}

TEST(FlatIndex, Examples) {
  Arena arena(16);
  const auto v3 = arena.allocate({3});
  EXPECT_EQ(flat_index(v3, {2}), 2u);
  const auto v23 = arena.allocate({2, 3});
  EXPECT_EQ(flat_index(v23, {1, 0}), 3u);
  EXPECT_ICSML_ERROR(flat_index(v23, {0, 3}), ErrorCode::IndexOutOfBounds);
  EXPECT_ICSML_ERROR(flat_index(v23, {0}), ErrorCode::IndexOutOfBounds);
}

TEST(FlatIndex, IsABijection) {
  Arena arena(256);
  const auto v = arena.allocate({3, 4, 5});
  std::set<std::size_t> seen;
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = 0; b < 4; ++b)
      for (std::size_t c = 0; c < 5; ++c) {
        const auto idx = flat_index(v, {a, b, c});
        EXPECT_LT(idx, v.length);
        seen.insert(idx);
      }
  EXPECT_EQ(seen.size(), v.length);
}

TEST(PlanMemory, Examples) {
  const auto plan = plan_memory({{"L1", {64}}, {"L2", {64}}});
  EXPECT_EQ(plan.total_elements, 128u);
  ASSERT_EQ(plan.entries.size(), 2u);
  EXPECT_EQ(plan.entries[0].offset, 0u);
  EXPECT_EQ(plan.entries[1].offset, 64u);

  const auto big = plan_memory({{"w", {512, 512}}, {"b", {512}}, {"out", {512}}});
  EXPECT_EQ(big.total_bytes, 1'052'672u);
  EXPECT_EQ(big.total_bytes, big.total_elements * 4);

  EXPECT_ICSML_ERROR(plan_memory(std::span<const NamedExtents>{}), ErrorCode::EmptyVector);
}

TEST(PlanMemory, EntriesAreContiguousAndDisjoint) {
  const auto plan = plan_memory({{"a", {3, 7}}, {"b", {1}}, {"c", {2, 2, 2}}});
  std::size_t expected = 0;
  for (const auto& e : plan.entries) {
    EXPECT_EQ(e.offset, expected);
    expected += e.length;
  }
  EXPECT_EQ(expected, plan.total_elements);
}
