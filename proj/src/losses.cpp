#include "maf/losses.hpp"

#include <algorithm>
#include <cmath>

namespace maf {

void LossWeights::validate() const {
  for (double x : {kp2d, joints3d, pose, shape, part, uv})
    if (!(x >= 0.0) || !std::isfinite(x)) throw ConfigError("loss weights must be finite and >= 0");
}

LossWeights LossWeights::scaled(double k) const {
  return {kp2d * k, joints3d * k, pose * k, shape * k, part * k, uv * k};
}

namespace {

// Per-element weights expanding a per-sample (or per-sample-per-row) mask.
template <class S>
Tensor<S> expand_weights(const Shape& shape, const std::vector<bool>& has, const Tensor<S>* rows) {
  Tensor<S> w(shape, S(1));
  const int B = shape[0];
  const std::size_t per = w.size() / B;
  const std::size_t row_len = rows ? per / rows->dim(1) : per;
  for (int b = 0; b < B; ++b)
    for (std::size_t i = 0; i < per; ++i) {
      S v = has.empty() || has[b] ? S(1) : S(0);
      if (rows) v *= (*rows)[b * rows->dim(1) + i / row_len];
      w[b * per + i] = v;
    }
  return w;
}

template <class S>
Var<S> weighted_term(const Var<S>& pred, const Tensor<S>& target, const Tensor<S>& weights,
                     double lambda, double& logged) {
  Var<S> t = ops::scale(ops::weighted_mse(pred, target, weights), S(lambda));
  logged = double(t.value()[0]);
  return t;
}

}  // namespace

template <class S>
RegLoss<S> reg_loss(const DecodedBody<S>& pred, const RegTargets<S>& gt, const LossWeights& w) {
  w.validate();
  const int B = pred.keypoints.dim(0);
  if (!gt.has_3d.empty() && static_cast<int>(gt.has_3d.size()) != B)
    throw ShapeError("reg_loss: has_3d length does not match batch");
  if (!gt.visibility.data.empty())
    expect_shape(gt.visibility.shape, {B, pred.keypoints.dim(1)}, "reg_loss visibility");
  RegLoss<S> out;
  const Tensor<S>* vis = gt.visibility.data.empty() ? nullptr : &gt.visibility;
  std::vector<Var<S>> terms;
  terms.push_back(weighted_term(pred.keypoints, gt.keypoints,
                                expand_weights<S>(pred.keypoints.shape(), {}, vis), w.kp2d,
                                out.kp2d));
  terms.push_back(weighted_term(pred.joints, gt.joints,
                                expand_weights<S>(pred.joints.shape(), gt.has_3d, nullptr),
                                w.joints3d, out.joints3d));
  terms.push_back(weighted_term(pred.rotmats, gt.rotmats,
                                expand_weights<S>(pred.rotmats.shape(), gt.has_3d, nullptr),
                                w.pose, out.pose));
  terms.push_back(weighted_term(pred.shape, gt.shape,
                                expand_weights<S>(pred.shape.shape(), gt.has_3d, nullptr),
                                w.shape, out.shape));
  out.total = ops::sum_scalars(terms);
  return out;
}

template <class S>
AuxLoss<S> aux_loss(const Var<S>& logits, const std::vector<IUVMap>& gt, const LossWeights& w) {
  w.validate();
  if (logits.value().rank() != 4) throw ShapeError("aux_loss: logits must be rank 4");
  const int B = logits.dim(0), Ch = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
  const int classes = Ch - 2;
  if (static_cast<int>(gt.size()) != B) throw ShapeError("aux_loss: batch size mismatch");
  for (const auto& m : gt)
    if (m.height != H || m.width != W || m.parts + 1 != classes)
      throw ShapeError("aux_loss: ground truth " + std::to_string(m.height) + "x" +
                       std::to_string(m.width) + " with " + std::to_string(m.parts) +
                       " parts does not match prediction " + shape_str(logits.shape()));
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const S* x = logits.value().ptr();
  double ce = 0, lu = 0, lv = 0;
  long fg = 0;
  for (int b = 0; b < B; ++b)
    for (std::size_t p = 0; p < plane; ++p) {
      const S* px = x + static_cast<std::size_t>(b) * Ch * plane + p;
      double mx = -INFINITY;
      for (int c = 0; c < classes; ++c) mx = std::max(mx, double(px[c * plane]));
      double se = 0;
      for (int c = 0; c < classes; ++c) se += std::exp(double(px[c * plane]) - mx);
      const int label = gt[b].part[p];
      ce += mx + std::log(se) - double(px[label * plane]);
      if (label > 0) {
        ++fg;
        lu += smooth_l1(double(px[classes * plane]) - gt[b].u[p]);
        lv += smooth_l1(double(px[(classes + 1) * plane]) - gt[b].v[p]);
      }
    }
  AuxLoss<S> out;
  const double npx = double(B) * plane;
  out.part = w.part * ce / npx;
  out.u = fg ? w.uv * lu / fg : 0.0;
  out.v = fg ? w.uv * lv / fg : 0.0;
  const double wpart = w.part, wuv = w.uv;
  out.total = make_op<S>(
      Tensor<S>({1}, S(out.part + out.u + out.v)), {logits},
      [gt, B, Ch, classes, plane, npx, fg, wpart, wuv](Node<S>& o) {
        Node<S>& pl = *o.parents[0];
        if (!pl.requires_grad) return;
        auto& g = pl.ensure_grad();
        const double go = o.grad[0];
        const S* x = pl.value.ptr();
        for (int b = 0; b < B; ++b)
          for (std::size_t p = 0; p < plane; ++p) {
            const std::size_t base = static_cast<std::size_t>(b) * Ch * plane + p;
            double mx = -INFINITY;
            for (int c = 0; c < classes; ++c) mx = std::max(mx, double(x[base + c * plane]));
            double se = 0;
            for (int c = 0; c < classes; ++c) se += std::exp(double(x[base + c * plane]) - mx);
            const int label = gt[b].part[p];
            const double kc = go * wpart / npx;
            for (int c = 0; c < classes; ++c) {
              const double prob = std::exp(double(x[base + c * plane]) - mx) / se;
              g[base + c * plane] += S(kc * (prob - (c == label ? 1.0 : 0.0)));
            }
            if (label > 0) {
              const double ku = go * wuv / double(fg);
              const double du = double(x[base + classes * plane]) - gt[b].u[p];
              const double dv = double(x[base + (classes + 1) * plane]) - gt[b].v[p];
              g[base + classes * plane] += S(ku * std::clamp(du, -1.0, 1.0));
              g[base + (classes + 1) * plane] += S(ku * std::clamp(dv, -1.0, 1.0));
            }
          }
      });
  return out;
}

template <class S>
TotalLoss<S> total_loss(std::span<const DecodedBody<S>> iterations, const RegTargets<S>& gt,
                        const LossWeights& w, const Var<S>* iuv_logits,
                        const std::vector<IUVMap>* iuv_gt) {
  if (iterations.empty()) throw ShapeError("total_loss: no iterations");
  TotalLoss<S> out;
  std::vector<Var<S>> terms;
  for (const auto& body : iterations) {
    out.per_iter.push_back(reg_loss(body, gt, w));
    terms.push_back(out.per_iter.back().total);
  }
  if (iuv_logits) {
    if (!iuv_gt) throw ShapeError("total_loss: IUV logits given without ground truth");
    out.aux = aux_loss(*iuv_logits, *iuv_gt, w);
    terms.push_back(out.aux.total);
  }
  out.total = ops::sum_scalars(terms);
  return out;
}

template RegLoss<float> reg_loss<float>(const DecodedBody<float>&, const RegTargets<float>&,
                                        const LossWeights&);
template RegLoss<double> reg_loss<double>(const DecodedBody<double>&, const RegTargets<double>&,
                                          const LossWeights&);
template AuxLoss<float> aux_loss<float>(const Var<float>&, const std::vector<IUVMap>&,
                                        const LossWeights&);
template AuxLoss<double> aux_loss<double>(const Var<double>&, const std::vector<IUVMap>&,
                                          const LossWeights&);

template TotalLoss<float> total_loss<float>(std::span<const DecodedBody<float>>,
                                            const RegTargets<float>&, const LossWeights&,
                                            const Var<float>*, const std::vector<IUVMap>*);
template TotalLoss<double> total_loss<double>(std::span<const DecodedBody<double>>,
                                              const RegTargets<double>&, const LossWeights&,
                                              const Var<double>*, const std::vector<IUVMap>*);

}  // namespace maf
