#include "cst/losses.hpp"

#include "cst/errors.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

namespace cst::loss {

void CstWeights::validate() const {
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw_parameter("CST weights must be >= 0");
  if (!(epsilon > 0.0)) throw_parameter("epsilon must be > 0");
}

namespace {

std::pair<torch::Tensor, torch::Tensor> flatten_pair(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes()) throw_parameter("structure maps have different dims");
  if (a.dim() <= 2) return {a.reshape({1, -1}), b.reshape({1, -1})};
  return {a.reshape({a.size(0), -1}), b.reshape({b.size(0), -1})};
}

}  // namespace

torch::Tensor dice_loss(const torch::Tensor& m_f, const torch::Tensor& m_r, double eps) {
  auto [f, r] = flatten_pair(m_f, m_r);
  auto inter = (f * r).sum(1);
  auto denom = f.sum(1) + r.sum(1);
  return (1.0 - (2.0 * inter + eps) / (denom + eps)).mean();
}

torch::Tensor iou_loss(const torch::Tensor& m_f, const torch::Tensor& m_r, double eps) {
  auto [f, r] = flatten_pair(m_f, m_r);
  auto inter = (f * r).sum(1);
  auto uni = f.sum(1) + r.sum(1) - inter;
  return (1.0 - (inter + eps) / (uni + eps)).mean();
}

CurvilinearTerms curvilinear_structure_loss(const torch::Tensor& real, const torch::Tensor& fake,
                                            const cem::Backend& backend, PerceptualNet& perceptual,
                                            const StructureLossOptions& opts, const torch::Tensor& map_real) {
  if (real.sizes() != fake.sizes()) throw_parameter("structure loss: real/fake shape mismatch");
  torch::Tensor m_r = map_real;
  if (!m_r.defined()) {
    torch::NoGradGuard no_grad;
    m_r = backend.extract_batch(signed_to_unit(real.detach()));
  }
  torch::Tensor m_f;
  if (opts.detach_maps) {
    torch::NoGradGuard no_grad;
    m_f = backend.extract_batch(signed_to_unit(fake.detach()));
  } else {
    m_f = backend.extract_batch(signed_to_unit(fake));
  }
  CurvilinearTerms t;
  t.dice = dice_loss(m_f, m_r, opts.epsilon);
  t.iou = iou_loss(m_f, m_r, opts.epsilon);
  t.perceptual = perceptual_distance(perceptual, real, fake);
  t.total = t.dice + t.iou + t.perceptual;
  t.map_fake = m_f;
  return t;
}

torch::Tensor rotation_consistency_loss(const backbone::ImageMap& g, const torch::Tensor& x, RotationAngle a) {
  return rotation_consistency_loss(g(x), g, x, a);
}

torch::Tensor rotation_consistency_loss(const torch::Tensor& original_output, const backbone::ImageMap& g,
                                        const torch::Tensor& x, RotationAngle a) {
  auto restored = inverse_rotate_tensor(g(rotate_tensor(x, a)), a);
  if (restored.sizes() != original_output.sizes()) throw_parameter("rotation branch changed the output shape");
  return (original_output - restored).abs().mean();
}

RotationAngle sample_rotation(Rng& rng) { return RotationAngle(1 + static_cast<int>(rng.below(3))); }

torch::Tensor total_loss(const torch::Tensor& l_base, const torch::Tensor& l_cur, const torch::Tensor& l_rot,
                         const CstWeights& w) {
  return l_base + w.lambda1 * l_cur + w.lambda2 * l_rot;
}

double total_loss(double l_base, double l_cur, double l_rot, const CstWeights& w) {
  return l_base + w.lambda1 * l_cur + w.lambda2 * l_rot;
}

bool LossBreakdown::consistent(const CstWeights& w, double tol) const {
  auto close = [tol](double a, double b) { return std::abs(a - b) <= tol * std::max(1.0, std::abs(b)); };
  return close(l_cur, l_dice + l_iou + l_perc) && close(l_total, total_loss(l_base, l_cur, l_rot, w));
}

LossLog::LossLog(const std::filesystem::path& file) {
  const bool fresh = !std::filesystem::exists(file) || std::filesystem::file_size(file) == 0;
  out_.open(file, std::ios::app);
  if (!out_) throw IoError("cannot open loss log " + file.string());
  if (fresh) out_ << kHeader << '\n';
}

void LossLog::append(const LossBreakdown& r) {
  out_ << r.step << std::setprecision(17) << ',' << r.l_base << ',' << r.l_dice << ',' << r.l_iou << ','
       << r.l_perc << ',' << r.l_cur << ',' << r.l_rot << ',' << r.l_total << '\n';
}

std::vector<LossBreakdown> LossLog::read(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot read loss log " + file.string());
  std::string line;
  std::getline(in, line);
  if (line != kHeader) throw DataError("unexpected loss log header in " + file.string());
  std::vector<LossBreakdown> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    LossBreakdown r;
    char comma = 0;
    ss >> r.step >> comma >> r.l_base >> comma >> r.l_dice >> comma >> r.l_iou >> comma >> r.l_perc >> comma >>
        r.l_cur >> comma >> r.l_rot >> comma >> r.l_total;
    if (!ss) throw DataError("malformed loss log row: " + line);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace cst::loss
