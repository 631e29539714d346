#include "structrans/reordering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace structrans::reordering {

SpanIndex::SpanIndex(std::size_t length) : length_(length) {
  width_offset_.assign(length + 2, 0);
  for (std::size_t w = 2; w <= length; ++w) {
    width_offset_[w] = starts_.size();
    for (std::size_t i = 0; i + w <= length; ++i) {
      starts_.push_back(i);
      ends_.push_back(i + w);
    }
  }
}

std::size_t SpanIndex::index(std::size_t i, std::size_t j) const {
  if (j > length_ || j < i + 2) throw UsageError("SpanIndex: no span [" + std::to_string(i) + "," + std::to_string(j) + ")");
  return width_offset_[j - i] + i;
}

SpanScores SpanScores::zeros(std::size_t length) {
  return {length, Array(Shape{SpanIndex(length).count(), 2}, 0.0)};
}

double SplitPosteriors::at(const SpanIndex& idx, std::size_t i, std::size_t j, std::size_t k, Orientation o) const {
  if (k <= i || k >= j) return 0.0;
  return table.at(idx.index(i, j), k - i - 1, o);
}

namespace {

double clamp_score(double s) { return std::clamp(s, -kScoreClamp, kScoreClamp); }

// Chart state shared by the forward computation and the adjoint.
struct Chart {
  std::size_t l = 0;
  SpanIndex spans{0};
  std::vector<double> log_z;               // (l+1)^2
  std::vector<std::vector<double>> post;   // per span: (w-1) x 2
  std::vector<std::vector<double>> perm;   // per span: w x w; leaves implicit

  explicit Chart(std::size_t length) : l(length), spans(length), log_z((length + 1) * (length + 1), 0.0) {}
  double& lz(std::size_t i, std::size_t j) { return log_z[i * (l + 1) + j]; }
  double lz(std::size_t i, std::size_t j) const { return log_z[i * (l + 1) + j]; }
};

void run_inside(const Array& scores, Chart& c) {
  const std::size_t l = c.l;
  c.post.assign(c.spans.count(), {});
  std::vector<double> terms;
  for (std::size_t s = 0; s < c.spans.count(); ++s) {
    const std::size_t i = c.spans.start(s), j = c.spans.end(s);
    terms.assign(2 * (j - i - 1), 0.0);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = i + 1; k < j; ++k)
      for (std::size_t o = 0; o < 2; ++o) {
        const double t = clamp_score(scores.at(s, o)) + c.lz(i, k) + c.lz(k, j);
        terms[2 * (k - i - 1) + o] = t;
        mx = std::max(mx, t);
      }
    double acc = 0.0;
    for (double t : terms) acc += std::exp(t - mx);
    const double lz = mx + std::log(acc);
    c.lz(i, j) = lz;
    auto& q = c.post[s];
    q.resize(terms.size());
    for (std::size_t t = 0; t < terms.size(); ++t) q[t] = std::exp(terms[t] - lz);
  }
  (void)l;
}

// Reads the conditional matrix for span [i, j); leaves are [1].
const double* child_matrix(const Chart& c, std::size_t i, std::size_t j, const double* one) {
  return j - i == 1 ? one : c.perm[c.spans.index(i, j)].data();
}

void run_permutation(Chart& c) {
  c.perm.assign(c.spans.count(), {});
  static const double one = 1.0;
  for (std::size_t s = 0; s < c.spans.count(); ++s) {
    const std::size_t i = c.spans.start(s), j = c.spans.end(s), w = j - i;
    auto& m = c.perm[s];
    m.assign(w * w, 0.0);
    for (std::size_t k = i + 1; k < j; ++k) {
      const std::size_t wl = k - i, wr = j - k;
      const double* left = child_matrix(c, i, k, &one);
      const double* right = child_matrix(c, k, j, &one);
      for (std::size_t o = 0; o < 2; ++o) {
        const double q = c.post[s][2 * (k - i - 1) + o];
        if (q == 0.0) continue;
        // Column offsets of the left and right blocks in the target.
        const std::size_t lc = o == kStraight ? 0 : wr;
        const std::size_t rc = o == kStraight ? wl : 0;
        for (std::size_t a = 0; a < wl; ++a)
          for (std::size_t b = 0; b < wl; ++b) m[a * w + lc + b] += q * left[a * wl + b];
        for (std::size_t a = 0; a < wr; ++a)
          for (std::size_t b = 0; b < wr; ++b) m[(wl + a) * w + rc + b] += q * right[a * wr + b];
      }
    }
  }
}

Array root_matrix(const Chart& c) {
  if (c.l == 1) return Array(Shape{1, 1}, 1.0);
  return Array(Shape{c.l, c.l}, c.perm.back());
}

void check_scores(const char* op, const Array& scores, std::size_t length) {
  if (length == 0) throw UsageError(std::string(op) + ": length must be positive");
  const SpanIndex idx(length);
  if (scores.shape() != Shape{idx.count(), 2}) throw ShapeError(op, {scores.shape(), Shape{idx.count(), 2}});
}

}  // namespace

InsideChart inside(const SpanScores& scores) {
  check_scores("inside", scores.score, scores.length);
  Chart c(scores.length);
  run_inside(scores.score, c);
  return {scores.length, Array(Shape{c.l + 1, c.l + 1}, c.log_z)};
}

SplitPosteriors split_posteriors(const SpanScores& scores, const InsideChart& chart) {
  check_scores("split_posteriors", scores.score, scores.length);
  const std::size_t l = scores.length;
  const SpanIndex idx(l);
  SplitPosteriors out{l, Array(Shape{idx.count(), l > 1 ? l - 1 : 0, 2}, 0.0)};
  for (std::size_t s = 0; s < idx.count(); ++s) {
    const std::size_t i = idx.start(s), j = idx.end(s);
    for (std::size_t k = i + 1; k < j; ++k)
      for (std::size_t o = 0; o < 2; ++o)
        out.table.at(s, k - i - 1, o) =
            std::exp(clamp_score(scores.score.at(s, o)) + chart.log_z.at(i, k) + chart.log_z.at(k, j) - chart.log_z.at(i, j));
  }
  return out;
}

MarginalPermutation expected_permutation(const SpanScores& scores) {
  return {expected_permutation(ad::constant(scores.score), scores.length)->value};
}

ad::Var expected_permutation(const ad::Var& scores, std::size_t length) {
  check_scores("expected_permutation", scores->value, length);
  auto c = std::make_shared<Chart>(length);
  run_inside(scores->value, *c);
  run_permutation(*c);
  return ad::make_node("expected_permutation", root_matrix(*c), {scores}, [c](ad::Node& self) {
    ad::Node& sn = *self.parents[0];
    if (c->l == 1) return;
    const std::size_t count = c->spans.count();
    Array& gs = sn.grad_buffer();
    std::vector<std::vector<double>> gm(count);
    std::vector<double> glz((c->l + 1) * (c->l + 1), 0.0);
    gm[count - 1] = self.grad.storage();
    std::vector<double> gq;
    for (std::size_t s = count; s-- > 0;) {
      const std::size_t i = c->spans.start(s), j = c->spans.end(s), w = j - i;
      const auto& q = c->post[s];
      const auto& g = gm[s];
      gq.assign(q.size(), 0.0);
      if (!g.empty()) {
        for (std::size_t k = i + 1; k < j; ++k) {
          const std::size_t wl = k - i, wr = j - k;
          static const double one = 1.0;
          const double* left = child_matrix(*c, i, k, &one);
          const double* right = child_matrix(*c, k, j, &one);
          std::vector<double>* gleft = wl > 1 ? &gm[c->spans.index(i, k)] : nullptr;
          std::vector<double>* gright = wr > 1 ? &gm[c->spans.index(k, j)] : nullptr;
          if (gleft && gleft->empty()) gleft->assign(wl * wl, 0.0);
          if (gright && gright->empty()) gright->assign(wr * wr, 0.0);
          for (std::size_t o = 0; o < 2; ++o) {
            const double qv = q[2 * (k - i - 1) + o];
            const std::size_t lc = o == kStraight ? 0 : wr;
            const std::size_t rc = o == kStraight ? wl : 0;
            double acc = 0.0;
            for (std::size_t a = 0; a < wl; ++a)
              for (std::size_t b = 0; b < wl; ++b) {
                const double up = g[a * w + lc + b];
                acc += up * left[a * wl + b];
                if (gleft) (*gleft)[a * wl + b] += qv * up;
              }
            for (std::size_t a = 0; a < wr; ++a)
              for (std::size_t b = 0; b < wr; ++b) {
                const double up = g[(wl + a) * w + rc + b];
                acc += up * right[a * wr + b];
                if (gright) (*gright)[a * wr + b] += qv * up;
              }
            gq[2 * (k - i - 1) + o] = acc;
          }
        }
      }
      // q = softmax over (k, o) of the terms; logZ(i,j) = LSE of the terms.
      double mean = 0.0;
      for (std::size_t t = 0; t < q.size(); ++t) mean += q[t] * gq[t];
      const double glz_ij = glz[i * (c->l + 1) + j];
      for (std::size_t k = i + 1; k < j; ++k)
        for (std::size_t o = 0; o < 2; ++o) {
          const std::size_t t = 2 * (k - i - 1) + o;
          const double gt = q[t] * (gq[t] - mean) + glz_ij * q[t];
          if (gt == 0.0) continue;
          const double raw = sn.value.at(s, o);
          if (raw > -kScoreClamp && raw < kScoreClamp) gs.at(s, o) += gt;
          glz[i * (c->l + 1) + k] += gt;
          glz[k * (c->l + 1) + j] += gt;
        }
    }
  });
}

}  // namespace structrans::reordering
