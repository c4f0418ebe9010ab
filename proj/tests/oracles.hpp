#pragma once

// Independent reference implementations used only by tests. They favour
// obviousness over speed and share no code with the library.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <vector>

namespace oracle {

struct Grid {
    int nx, ny, nz;
    std::size_t at(int x, int y, int z) const { return (std::size_t(z) * ny + y) * nx + x; }
    bool inside(int x, int y, int z) const { return x >= 0 && y >= 0 && z >= 0 && x < nx && y < ny && z < nz; }
    std::size_t size() const { return std::size_t(nx) * ny * nz; }
};

/// Number of integer points (x, y, z) with x^2 + y^2 + z^2 <= r^2.
inline long lattice_ball_count(int r) {
    long n = 0;
    for (int x = -r; x <= r; ++x)
        for (int y = -r; y <= r; ++y)
            for (int z = -r; z <= r; ++z)
                if (x * x + y * y + z * z <= r * r) ++n;
    return n;
}

/// Recursive-free stack flood fill with 6-neighbourhood.
inline std::vector<std::uint8_t> flood_fill(const Grid& g, const std::vector<float>& v,
                                            const std::vector<std::uint8_t>& seeds, double lo, double hi) {
    std::vector<std::uint8_t> out(g.size(), 0);
    std::vector<std::array<int, 3>> stack;
    auto ok = [&](std::size_t i) { return v[i] >= lo && v[i] <= hi; };
    for (int z = 0; z < g.nz; ++z)
        for (int y = 0; y < g.ny; ++y)
            for (int x = 0; x < g.nx; ++x) {
                const std::size_t i = g.at(x, y, z);
                if (seeds[i] && ok(i) && !out[i]) {
                    out[i] = 1;
                    stack.push_back({x, y, z});
                }
            }
    const int d[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    while (!stack.empty()) {
        const auto p = stack.back();
        stack.pop_back();
        for (const auto& o : d) {
            const int x = p[0] + o[0], y = p[1] + o[1], z = p[2] + o[2];
            if (!g.inside(x, y, z)) continue;
            const std::size_t i = g.at(x, y, z);
            if (!out[i] && ok(i)) {
                out[i] = 1;
                stack.push_back({x, y, z});
            }
        }
    }
    return out;
}

/// Union-find labelling; returns the sorted list of component sizes.
inline std::vector<std::size_t> component_sizes(const Grid& g, const std::vector<std::uint8_t>& m, bool full26) {
    std::vector<std::size_t> parent(g.size());
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](std::size_t a) {
        while (parent[a] != a) a = parent[a] = parent[parent[a]];
        return a;
    };
    for (int z = 0; z < g.nz; ++z)
        for (int y = 0; y < g.ny; ++y)
            for (int x = 0; x < g.nx; ++x) {
                if (!m[g.at(x, y, z)]) continue;
                for (int dz = -1; dz <= 1; ++dz)
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dx = -1; dx <= 1; ++dx) {
                            const int manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
                            if (manhattan == 0 || (!full26 && manhattan != 1)) continue;
                            const int xx = x + dx, yy = y + dy, zz = z + dz;
                            if (!g.inside(xx, yy, zz) || !m[g.at(xx, yy, zz)]) continue;
                            parent[find(g.at(x, y, z))] = find(g.at(xx, yy, zz));
                        }
            }
    std::map<std::size_t, std::size_t> sizes;
    for (std::size_t i = 0; i < g.size(); ++i)
        if (m[i]) ++sizes[find(i)];
    std::vector<std::size_t> out;
    for (const auto& [root, n] : sizes) out.push_back(n);
    std::sort(out.begin(), out.end());
    return out;
}

/// Two-pass mean and population standard deviation.
inline std::pair<double, double> mean_std(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    const double m = s / double(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return {m, std::sqrt(ss / double(v.size()))};
}

/// Composite Simpson integral of the standard normal density over [-z, z].
inline double normal_mass(double z, int intervals = 20000) {
    const double h = 2.0 * z / intervals;
    auto f = [](double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); };
    double s = f(-z) + f(z);
    for (int i = 1; i < intervals; ++i) s += f(-z + i * h) * (i % 2 ? 4.0 : 2.0);
    return s * h / 3.0;
}

}  // namespace oracle
