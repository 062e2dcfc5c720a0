#pragma once

// Truncated radial quadrature on [0, r_max] for H^{n+1} with volume element
// |S^n| sinh^n r dr. Gauss-Legendre panels, geometrically refined at 0.

#include <cmath>
#include <utility>
#include <vector>

#include "hyperdisp/errors.hpp"
#include "hyperdisp/quadrature.hpp"

namespace hyperdisp {

/// Volume of the unit sphere S^n.
inline double sphere_area(int n) { return 2.0 * std::pow(pi, 0.5 * (n + 1)) / std::tgamma(0.5 * (n + 1)); }

struct RadialGrid {
  int n = 2;
  double r_max = 25.0;
  int order = 10;
  int refine_levels = 6;
  std::vector<double> edges;  // panel boundaries
  std::vector<double> r;      // nodes, strictly increasing
  std::vector<double> w;      // dr weights
  std::vector<double> vol;    // |S^n| sinh^n r_i
  std::vector<int> panel;     // panel index of each node

  std::size_t size() const { return r.size(); }
  double measure(std::size_t i) const { return w[i] * vol[i]; }
  int panel_count() const { return static_cast<int>(edges.size()) - 1; }
  std::pair<std::size_t, std::size_t> panel_range(int p) const {
    return {static_cast<std::size_t>(p) * order, static_cast<std::size_t>(p + 1) * order};
  }
  int panel_of(double x) const {
    for (int p = 0; p + 1 < static_cast<int>(edges.size()); ++p)
      if (x <= edges[p + 1]) return p;
    return panel_count() - 1;
  }

  /// Twice the nodes on a 25% longer interval, two extra halvings at 0.
  RadialGrid refined(double stretch = 1.25) const {
    return make(n, r_max * stretch, 2 * static_cast<int>(size()), order, refine_levels + 2);
  }

  /// nodes ~ requested node count; `refine` geometric halvings of the first panel.
  static RadialGrid make(int n, double r_max = 25.0, int nodes = 400, int order = 10, int refine = 6) {
    require(n >= 1, ErrorCode::precondition, "dimension n must be >= 1");
    require(r_max > 0.0 && nodes >= 2 * order, ErrorCode::precondition, "grid needs r_max > 0 and enough nodes");
    RadialGrid g;
    g.n = n;
    g.r_max = r_max;
    g.order = order;
    g.refine_levels = refine;
    const int panels = std::max(refine + 1, nodes / order);
    const int uniform = panels - refine;
    const double width = r_max / uniform;
    g.edges.push_back(0.0);
    for (int k = refine; k >= 1; --k) g.edges.push_back(width * std::pow(0.5, k));
    for (int k = 1; k <= uniform; ++k) g.edges.push_back(width * k);
    const auto& rule = quad::gauss_rule(order);
    require(rule.size() == order, ErrorCode::precondition, "unsupported Gauss order");
    const double area = sphere_area(n);
    for (int p = 0; p + 1 < static_cast<int>(g.edges.size()); ++p) {
      const double a = g.edges[p], b = g.edges[p + 1];
      for (int i = 0; i < order; ++i) {
        const double x = 0.5 * (a + b) + 0.5 * (b - a) * rule.x[i];
        g.r.push_back(x);
        g.w.push_back(0.5 * (b - a) * rule.w[i]);
        g.vol.push_back(area * std::pow(std::sinh(x), n));
        g.panel.push_back(p);
      }
    }
    return g;
  }
};

}  // namespace hyperdisp
