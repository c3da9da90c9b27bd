#include "oracles.hpp"

#include <cmath>
#include <cstdint>

namespace decay_bench::testkit {

double brute_auroc(const std::vector<double>& s, const std::vector<int>& y) {
    double wins = 0;
    std::int64_t p = 0, n = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (y[i] != 1) continue;
        ++p;
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (y[j] != 0) continue;
            wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
        }
    }
    for (int v : y) n += v == 0;
    return 100.0 * wins / (static_cast<double>(p) * static_cast<double>(n));
}

NaiveCounts naive_confusion(const std::vector<std::pair<int, int>>& truth_pred, int classes) {
    NaiveCounts r;
    r.matrix.assign(classes, std::vector<long>(classes, 0));
    long correct = 0;
    for (auto [t, p] : truth_pred) {
        ++r.matrix[t][p];
        correct += t == p;
    }
    r.accuracy = truth_pred.empty() ? 0.0 : 100.0 * correct / static_cast<double>(truth_pred.size());
    for (int c = 0; c < classes; ++c) {
        long tp = r.matrix[c][c], col = 0, row = 0;
        for (int k = 0; k < classes; ++k) {
            col += r.matrix[k][c];
            row += r.matrix[c][k];
        }
        const double p = col ? 100.0 * tp / col : 0.0;
        const double q = row ? 100.0 * tp / row : 0.0;
        r.precision.push_back(p);
        r.recall.push_back(q);
        r.f1.push_back(p + q > 0 ? 2 * p * q / (p + q) : 0.0);
    }
    return r;
}

void jacobi_eigen(std::vector<std::vector<double>> a, std::vector<double>& values,
                  std::vector<std::vector<double>>& vectors) {
    const std::size_t n = a.size();
    vectors.assign(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) vectors[i][i] = 1.0;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
        if (off < 1e-30) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(a[p][q]) < 1e-300) continue;
                const double theta = (a[q][q] - a[p][p]) / (2 * a[p][q]);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
                const double c = 1 / std::sqrt(t * t + 1), s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a[k][p], akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a[p][k], aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = vectors[k][p], vkq = vectors[k][q];
                    vectors[k][p] = c * vkp - s * vkq;
                    vectors[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    values.resize(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = a[i][i];
}

}  // namespace decay_bench::testkit
