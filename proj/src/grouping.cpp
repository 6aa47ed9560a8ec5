#include "sonet/grouping.hpp"

#include <algorithm>
#include <cmath>

namespace sonet {

namespace {

// k smallest distances with ties to the lowest index, by insertion into a
// sorted prefix (M is at most 121, so brute force wins over any index).
void knn_brute(const double* query, const double* pts, std::size_t count, std::size_t dims,
               std::size_t k, std::size_t* out_idx) {
    std::vector<std::pair<double, std::size_t>> best;
    best.reserve(k + 1);
    for (std::size_t j = 0; j < count; ++j) {
        double d2 = 0;
        for (std::size_t d = 0; d < dims; ++d) {
            const double t = query[d] - pts[j * dims + d];
            d2 += t * t;
        }
        if (best.size() == k && d2 >= best.back().first) continue;
        auto pos = std::upper_bound(best.begin(), best.end(), std::make_pair(d2, j));
        best.insert(pos, {d2, j});
        if (best.size() > k) best.pop_back();
    }
    for (std::size_t c = 0; c < k; ++c) out_idx[c] = best[c].second;
}

}  // namespace

Assignment knn_assign(const PointCloud& cloud, const SomGrid& som, std::size_t k) {
    cloud.validate();
    if (cloud.dims != som.dims) throw Error("knn_assign: cloud/grid dimension mismatch");
    const std::size_t M = som.node_count();
    if (k < 1 || k > M) throw Error("knn_assign: k out of range 1..M");

    Assignment a;
    a.n = cloud.n;
    a.k = k;
    a.node_total = M;
    a.dims = cloud.dims;
    a.knn_nodes.resize(cloud.n * k);
    a.normalized.resize(cloud.n * k * cloud.dims);
    a.owner_point.resize(cloud.n * k);
    a.owner_node.resize(cloud.n * k);
    a.node_members.assign(M, {});
    a.isolated.assign(M, true);

    for (std::size_t i = 0; i < cloud.n; ++i) {
        knn_brute(cloud.point(i), som.nodes.data(), M, cloud.dims, k, a.knn_nodes.data() + i * k);
        for (std::size_t c = 0; c < k; ++c) {
            const std::size_t r = i * k + c;
            const std::size_t j = a.knn_nodes[i * k + c];
            a.owner_point[r] = i;
            a.owner_node[r] = j;
            for (std::size_t d = 0; d < cloud.dims; ++d)
                a.normalized[r * cloud.dims + d] = cloud.point(i)[d] - som.node(j)[d];
            a.node_members[j].push_back(r);
            a.isolated[j] = false;
        }
    }
    return a;
}

std::vector<std::size_t> node_knn(const SomGrid& som, std::size_t k_prime) {
    const std::size_t M = som.node_count();
    if (k_prime < 1 || k_prime > M) throw Error("node_knn: k' out of range 1..M");
    std::vector<std::size_t> out(M * k_prime);
    for (std::size_t j = 0; j < M; ++j)
        knn_brute(som.node(j), som.nodes.data(), M, som.dims, k_prime, out.data() + j * k_prime);
    return out;
}

GroupMax group_reduce_max(const Tensor& rows, const std::vector<std::vector<std::size_t>>& groups,
                          const std::vector<double>& fill) {
    if (rows.rank() != 2) throw Error("group_reduce_max: rows must be 2-D");
    const std::size_t C = rows.dim(1);
    if (fill.size() != C) throw Error("group_reduce_max: fill width mismatch");
    const std::size_t G = groups.size();
    GroupMax res;
    res.out = Tensor({G, C});
    res.argmax.assign(G * C, -1);
    for (std::size_t g = 0; g < G; ++g) {
        if (groups[g].empty()) {
            for (std::size_t c = 0; c < C; ++c) res.out.at(g, c) = fill[c];
            continue;
        }
        for (std::size_t c = 0; c < C; ++c) {
            double best = -std::numeric_limits<double>::infinity();
            long best_row = -1;
            for (std::size_t r : groups[g]) {
                if (r >= rows.dim(0)) throw Error("group_reduce_max: row index out of range");
                const double v = rows.at(r, c);
                if (std::isnan(v)) throw Error("group_reduce_max: NaN input");
                if (v > best) {
                    best = v;
                    best_row = static_cast<long>(r);
                }
            }
            res.out.at(g, c) = best;
            res.argmax[g * C + c] = best_row;
        }
    }
    return res;
}

}  // namespace sonet
