#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "sonet/grouping.hpp"
#include "test_helpers.hpp"

using namespace sonet;
using sonet::testing::random_cloud;
using sonet::testing::permuted;

namespace {
SomGrid grid_from(std::vector<double> nodes, std::size_t m, std::size_t dims) {
    SomGrid g;
    g.m = m;
    g.dims = dims;
    g.nodes = std::move(nodes);
    return g;
}
}  // namespace

TEST_CASE("knn_assign with a single node") {
    auto c = random_cloud(10, 3, 1);
    auto som = grid_from({0.1, 0.2, 0.3}, 1, 3);
    auto a = knn_assign(c, som, 1);
    CHECK(a.rows() == 10);
    for (std::size_t i = 0; i < 10; ++i) {
        CHECK(a.owner_node[i] == 0);
        for (int d = 0; d < 3; ++d)
            CHECK(a.normalized[i * 3 + d] == c.point(i)[d] - som.nodes[d]);
    }
    CHECK(a.node_members[0].size() == 10);
    CHECK_FALSE(a.isolated[0]);
}

TEST_CASE("knn_assign normalization arithmetic") {
    PointCloud c(1, 3);
    c.points = {0.5, 0, 0};
    auto som = grid_from({0.2, 0, 0, -5, 0, 0, 5, 0, 0, 0, 5, 0}, 2, 3);
    auto a = knn_assign(c, som, 1);
    CHECK(a.owner_node[0] == 0);
    CHECK(a.normalized[0] == doctest::Approx(0.3));
    CHECK(a.normalized[1] == 0.0);
}

TEST_CASE("knn_assign mean membership equals k*N/M") {
    auto c = random_cloud(2048, 3, 2);
    auto som = potential_init(8, 3);
    auto a = knn_assign(c, som, 3);
    std::size_t total = 0;
    for (const auto& g : a.node_members) total += g.size();
    CHECK(total == 3 * 2048);
    CHECK(static_cast<double>(total) / 64.0 == doctest::Approx(96.0));
}

TEST_CASE("knn_assign exact arithmetic identity on every row") {
    auto c = random_cloud(128, 3, 3);
    auto som = potential_init(4, 3);
    auto a = knn_assign(c, som, 5);
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t d = 0; d < 3; ++d)
            CHECK(a.normalized[r * 3 + d] ==
                  c.point(a.owner_point[r])[d] - som.node(a.owner_node[r])[d]);
}

TEST_CASE("knn_assign k out of range") {
    auto c = random_cloud(8, 3, 4);
    auto som = potential_init(2, 3);
    CHECK_THROWS_AS(knn_assign(c, som, 5), Error);
}

TEST_CASE("knn row multiset is permutation invariant") {
    auto c = random_cloud(200, 3, 5);
    auto som = potential_init(4, 3);
    auto sorted_rows = [&](const PointCloud& cloud) {
        auto a = knn_assign(cloud, som, 3);
        std::vector<std::array<double, 3>> rows(a.rows());
        for (std::size_t r = 0; r < a.rows(); ++r)
            for (int d = 0; d < 3; ++d) rows[r][d] = a.normalized[r * 3 + d];
        std::sort(rows.begin(), rows.end());
        return rows;
    };
    RandomStream rng(6);
    auto ref = sorted_rows(c);
    for (int t = 0; t < 5; ++t) CHECK(sorted_rows(permuted(c, rng)) == ref);
}

TEST_CASE("knn_assign with k=M gives every node all points") {
    auto c = random_cloud(50, 2, 7);
    auto som = potential_init(3, 2);
    auto a = knn_assign(c, som, som.node_count());
    for (const auto& members : a.node_members) CHECK(members.size() == c.n);
}

TEST_CASE("node_knn with k'=1 is the identity") {
    auto som = potential_init(4, 3);
    auto nn = node_knn(som, 1);
    for (std::size_t j = 0; j < som.node_count(); ++j) CHECK(nn[j] == j);
}

TEST_CASE("node_knn on a 3x3 lattice with k'=9 covers all nodes") {
    SomGrid som;
    som.m = 3;
    som.dims = 2;
    for (int x = 0; x < 3; ++x)
        for (int y = 0; y < 3; ++y) {
            som.nodes.push_back(x);
            som.nodes.push_back(y);
        }
    auto nn = node_knn(som, 9);
    for (std::size_t j = 0; j < 9; ++j) {
        std::vector<std::size_t> list(nn.begin() + static_cast<long>(j * 9),
                                      nn.begin() + static_cast<long>((j + 1) * 9));
        std::sort(list.begin(), list.end());
        for (std::size_t i = 0; i < 9; ++i) CHECK(list[i] == i);
        CHECK(nn[j * 9] == j);  // self first
    }
}

TEST_CASE("node_knn matches the O(M^2) sort oracle") {
    auto som = potential_init(5, 3, {.seed = 77});
    const std::size_t M = som.node_count();
    auto nn = node_knn(som, 4);
    for (std::size_t j = 0; j < M; ++j) {
        std::vector<std::pair<double, std::size_t>> all;
        for (std::size_t k = 0; k < M; ++k) {
            double d2 = 0;
            for (int d = 0; d < 3; ++d) {
                const double t = som.node(j)[d] - som.node(k)[d];
                d2 += t * t;
            }
            all.emplace_back(d2, k);
        }
        std::sort(all.begin(), all.end());
        for (std::size_t c = 0; c < 4; ++c) CHECK(nn[j * 4 + c] == all[c].second);
    }
}

TEST_CASE("group_reduce_max basic and empty groups") {
    Tensor rows({2, 2}, {1, 5, 3, 2});
    auto res = group_reduce_max(rows, {{0, 1}, {}}, {0, 0});
    CHECK(res.out.at(0, 0) == 3);
    CHECK(res.out.at(0, 1) == 5);
    CHECK(res.out.at(1, 0) == 0);
    CHECK(res.out.at(1, 1) == 0);
    CHECK(res.argmax[0] == 1);
    CHECK(res.argmax[1] == 0);
    CHECK(res.argmax[2] == -1);
    CHECK(res.argmax[3] == -1);
}

TEST_CASE("group_reduce_max equals the double-loop oracle") {
    RandomStream rng(31);
    Tensor rows({50, 8});
    for (auto& v : rows.data) v = rng.uniform(-5, 5);
    std::vector<std::vector<std::size_t>> groups(7);
    for (std::size_t r = 0; r < 50; ++r) groups[rng.index(7)].push_back(r);
    auto res = group_reduce_max(rows, groups, std::vector<double>(8, 0.0));
    for (std::size_t g = 0; g < 7; ++g)
        for (std::size_t c = 0; c < 8; ++c) {
            double best = groups[g].empty() ? 0.0 : -1e18;
            for (std::size_t r : groups[g]) best = std::max(best, rows.at(r, c));
            CHECK(res.out.at(g, c) == best);
        }
}

TEST_CASE("group max is invariant to member order") {
    RandomStream rng(37);
    Tensor rows({20, 4});
    for (auto& v : rows.data) v = rng.uniform(-1, 1);
    std::vector<std::size_t> members(20);
    for (std::size_t i = 0; i < 20; ++i) members[i] = i;
    auto res1 = group_reduce_max(rows, {members}, std::vector<double>(4, 0.0));
    std::reverse(members.begin(), members.end());
    auto res2 = group_reduce_max(rows, {members}, std::vector<double>(4, 0.0));
    CHECK(res1.out.data == res2.out.data);
}
