#include "ffmerge/analysis.hpp"

#include <cmath>
#include <cstdio>

#include "ffmerge/errors.hpp"

namespace ffmerge {

namespace {

// Column-centered copy in f64, column-major.
std::vector<double> centered_columns(const Matrix& x) {
  const ColumnStats stats = column_stats(x);
  const std::size_t n = x.rows();
  std::vector<double> out(n * x.cols());
  for (std::size_t j = 0; j < x.cols(); ++j)
    for (std::size_t i = 0; i < n; ++i) out[j * n + i] = x(i, j) - stats.means[j];
  return out;
}

// ‖Aᵀ B‖²_F for centered column-major A (n × p) and B (n × q).
double cross_gram_sq(const std::vector<double>& a, std::size_t p, const std::vector<double>& b,
                     std::size_t q, std::size_t n) {
  double total = 0.0;
  for (std::size_t j = 0; j < p; ++j) {
    const double* aj = a.data() + j * n;
    for (std::size_t k = 0; k < q; ++k) {
      const double* bk = b.data() + k * n;
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += aj[i] * bk[i];
      total += dot * dot;
    }
  }
  return total;
}

std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

double linear_cka(const Matrix& x, const Matrix& y) {
  if (x.rows() != y.rows()) {
    throw DimensionError("linear_cka row mismatch: " + x.shape_string() + " vs " +
                         y.shape_string());
  }
  if (x.rows() < 2) throw DomainError("linear_cka needs at least 2 rows");
  const std::size_t n = x.rows();
  const auto xc = centered_columns(x);
  const auto yc = centered_columns(y);
  const double xx = std::sqrt(cross_gram_sq(xc, x.cols(), xc, x.cols(), n));
  const double yy = std::sqrt(cross_gram_sq(yc, y.cols(), yc, y.cols(), n));
  if (xx == 0.0 || yy == 0.0) return 0.0;
  return cross_gram_sq(yc, y.cols(), xc, x.cols(), n) / (xx * yy);
}

CkaMatrix cka_matrix(const ActivationSet& acts) {
  if (acts.per_layer.size() < 2) throw DomainError("cka_matrix needs at least 2 layers");
  CkaMatrix out;
  out.tap = acts.tap;
  out.sample_count = acts.sample_count;
  for (const auto& [index, m] : acts.per_layer) out.layers.push_back(index);
  const std::size_t count = out.layers.size();
  out.values = Matrix(count, count);
  for (std::size_t a = 0; a < count; ++a) {
    const Matrix& xa = acts.layer(out.layers[a]);
    out.values(a, a) = static_cast<float>(linear_cka(xa, xa));
    for (std::size_t b = a + 1; b < count; ++b) {
      const float v = static_cast<float>(linear_cka(xa, acts.layer(out.layers[b])));
      out.values(a, b) = v;
      out.values(b, a) = v;
    }
  }
  return out;
}

std::string to_csv(const CkaMatrix& cka) {
  std::string out;
  for (std::size_t r = 0; r < cka.values.rows(); ++r) {
    for (std::size_t c = 0; c < cka.values.cols(); ++c) {
      if (c) out += ',';
      out += format_value(cka.values(r, c));
    }
    out += '\n';
  }
  return out;
}

Json to_json(const CkaMatrix& cka) {
  Json j = Json::object();
  j["tap"] = to_string(cka.tap);
  j["layers"] = cka.layers;
  j["sample_count"] = cka.sample_count;
  Json rows = Json::array();
  for (std::size_t r = 0; r < cka.values.rows(); ++r) {
    Json row = Json::array();
    for (float v : cka.values.row(r)) row.push_back(std::stod(format_value(v)));
    rows.push_back(std::move(row));
  }
  j["values"] = std::move(rows);
  return j;
}

}  // namespace ffmerge
