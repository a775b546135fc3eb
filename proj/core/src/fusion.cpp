// SPDX-License-Identifier: Apache-2.0
#include "rhythmid/fusion.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "rhythmid/ops.hpp"

namespace rhythmid {

const std::vector<double>* XVectorTable::find(const std::string& utt_id) const {
  auto it = entries.find(utt_id);
  return it == entries.end() ? nullptr : &it->second;
}

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab == std::string_view::npos ? tab : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return fields;
}

double parse_number(std::string_view field, std::size_t line_no) {
  double value = 0.0;
  const char* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (ec != std::errc() || ptr != end || !std::isfinite(value)) {
    throw std::invalid_argument("x-vector line " + std::to_string(line_no) +
                                ": non-numeric field '" + std::string(field) + "'");
  }
  return value;
}

}  // namespace

XVectorTable load_xvectors(std::istream& in) {
  XVectorTable table;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (!have_header) {
      if (fields.size() != 2 || fields[0] != "dim") {
        throw std::invalid_argument("x-vector line " + std::to_string(line_no) +
                                    ": expected header dim<TAB>D");
      }
      const double d = parse_number(fields[1], line_no);
      if (d < 1 || d != std::floor(d)) {
        throw std::invalid_argument("x-vector line " + std::to_string(line_no) +
                                    ": dimension must be a positive integer");
      }
      table.dim = static_cast<std::size_t>(d);
      have_header = true;
      continue;
    }
    if (fields.size() != table.dim + 1) {
      throw std::invalid_argument("x-vector line " + std::to_string(line_no) + ": expected " +
                                  std::to_string(table.dim) + " values, found " +
                                  std::to_string(fields.size() - 1));
    }
    std::string utt_id(fields[0]);
    if (utt_id.empty()) {
      throw std::invalid_argument("x-vector line " + std::to_string(line_no) + ": empty utt_id");
    }
    std::vector<double> values(table.dim);
    for (std::size_t i = 0; i < table.dim; ++i) values[i] = parse_number(fields[i + 1], line_no);
    if (!table.entries.emplace(utt_id, std::move(values)).second) {
      throw std::invalid_argument("x-vector line " + std::to_string(line_no) +
                                  ": duplicate utt_id '" + utt_id + "'");
    }
  }
  if (in.bad()) throw std::runtime_error("I/O error while reading x-vectors");
  if (!have_header) throw std::invalid_argument("x-vector file has no dim header");
  return table;
}

XVectorTable load_xvectors(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open x-vector file " + path.string());
  return load_xvectors(in);
}

void write_xvectors(std::ostream& out, const XVectorTable& table) {
  out << "dim\t" << table.dim << '\n';
  char buf[32];
  for (const auto& [utt_id, values] : table.entries) {
    out << utt_id;
    for (double v : values) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
      out << '\t' << std::string_view(buf, static_cast<std::size_t>(ptr - buf));
    }
    out << '\n';
  }
}

template <typename T>
Tensor<T> xvector_tensor(const Batch& batch) {
  if (batch.xvector_dim == 0 || batch.xvectors.size() != batch.rows * batch.xvector_dim) {
    throw std::invalid_argument("batch carries no x-vectors");
  }
  std::vector<T> values(batch.xvectors.begin(), batch.xvectors.end());
  return Tensor<T>(Shape{batch.rows, batch.xvector_dim}, std::move(values));
}

template <typename T>
FusionAssembly<T>::FusionAssembly(RhythmEncoderModel<T> rhythm, FusionConfig config,
                                  std::size_t n_speakers, Rng& rng)
    : rhythm_(std::move(rhythm)), config_(config), n_speakers_(n_speakers) {
  if (config_.xvector_dim == 0 || config_.projection_dim == 0 || n_speakers == 0) {
    throw std::invalid_argument("fusion needs positive x-vector, projection and speaker sizes");
  }
  const std::size_t p = config_.projection_dim;
  proj_x_w_ = xavier_uniform<T>(config_.xvector_dim, p, rng);
  proj_x_b_ = Tensor<T>::zeros(Shape{p}, true);
  proj_r_w_ = xavier_uniform<T>(rhythm_.config().d_model, p, rng);
  proj_r_b_ = Tensor<T>::zeros(Shape{p}, true);
  head_w_ = xavier_uniform<T>(head_input_dim(), n_speakers, rng);
  head_b_ = Tensor<T>::zeros(Shape{n_speakers}, true);
}

template <typename T>
FusionAssembly<T>::FusionAssembly(RhythmEncoderModel<T> rhythm, FusionConfig config,
                                  std::size_t n_speakers, Tensor<T> proj_x_w, Tensor<T> proj_x_b,
                                  Tensor<T> proj_r_w, Tensor<T> proj_r_b, Tensor<T> head_w,
                                  Tensor<T> head_b)
    : rhythm_(std::move(rhythm)),
      config_(config),
      n_speakers_(n_speakers),
      proj_x_w_(std::move(proj_x_w)),
      proj_x_b_(std::move(proj_x_b)),
      proj_r_w_(std::move(proj_r_w)),
      proj_r_b_(std::move(proj_r_b)),
      head_w_(std::move(head_w)),
      head_b_(std::move(head_b)) {
  const std::size_t p = config_.projection_dim;
  if (proj_x_w_.shape() != Shape{config_.xvector_dim, p} ||
      proj_r_w_.shape() != Shape{rhythm_.config().d_model, p} ||
      head_w_.shape() != Shape{head_input_dim(), n_speakers}) {
    throw ShapeError("fusion parameters do not match the fusion config");
  }
}

template <typename T>
std::size_t FusionAssembly<T>::head_input_dim() const {
  return config_.op == FusionOp::concat ? 2 * config_.projection_dim : config_.projection_dim;
}

template <typename T>
Tensor<T> FusionAssembly<T>::logits(const Batch& batch, bool training, Rng& rng) const {
  if (batch.xvector_dim != config_.xvector_dim) {
    throw ShapeError("x-vector dim " + std::to_string(batch.xvector_dim) +
                     " does not match fusion dim " + std::to_string(config_.xvector_dim));
  }
  Tensor<T> pooled = rhythm_.forward(batch, training, rng).pooled;
  Tensor<T> xs = add(matmul(xvector_tensor<T>(batch), proj_x_w_), proj_x_b_);
  Tensor<T> rs = add(matmul(pooled, proj_r_w_), proj_r_b_);
  Tensor<T> fused = config_.op == FusionOp::concat ? concat_last_dim(xs, rs) : add(xs, rs);
  return add(matmul(fused, head_w_), head_b_);
}

template <typename T>
std::vector<NamedParameter<T>> FusionAssembly<T>::parameters() const {
  std::vector<NamedParameter<T>> out;
  for (auto& p : rhythm_.parameters()) out.push_back({"rhythm." + p.name, p.tensor});
  out.push_back({"fusion.proj_x.weight", proj_x_w_});
  out.push_back({"fusion.proj_x.bias", proj_x_b_});
  out.push_back({"fusion.proj_r.weight", proj_r_w_});
  out.push_back({"fusion.proj_r.bias", proj_r_b_});
  out.push_back({"fusion.head.weight", head_w_});
  out.push_back({"fusion.head.bias", head_b_});
  return out;
}

template <typename T>
XVectorBaseline<T>::XVectorBaseline(std::size_t xvector_dim, std::size_t n_speakers, Rng& rng)
    : weight_(xavier_uniform<T>(xvector_dim, n_speakers, rng)),
      bias_(Tensor<T>::zeros(Shape{n_speakers}, true)) {
  if (xvector_dim == 0 || n_speakers == 0) {
    throw std::invalid_argument("x-vector baseline needs positive sizes");
  }
}

template <typename T>
XVectorBaseline<T>::XVectorBaseline(Tensor<T> weight, Tensor<T> bias)
    : weight_(std::move(weight)), bias_(std::move(bias)) {
  if (weight_.rank() != 2 || bias_.shape() != Shape{weight_.dim(1)}) {
    throw ShapeError("x-vector baseline weight " + shape_to_string(weight_.shape()) +
                     " and bias " + shape_to_string(bias_.shape()) + " disagree");
  }
}

template <typename T>
Tensor<T> XVectorBaseline<T>::logits(const Batch& batch, bool, Rng&) const {
  if (batch.xvector_dim != weight_.dim(0)) {
    throw ShapeError("x-vector dim " + std::to_string(batch.xvector_dim) +
                     " does not match baseline input dim " + std::to_string(weight_.dim(0)));
  }
  return add(matmul(xvector_tensor<T>(batch), weight_), bias_);
}

template <typename T>
std::vector<NamedParameter<T>> XVectorBaseline<T>::parameters() const {
  return {{"baseline.weight", weight_}, {"baseline.bias", bias_}};
}

template Tensor<float> xvector_tensor<float>(const Batch&);
template Tensor<double> xvector_tensor<double>(const Batch&);
template class FusionAssembly<float>;
template class FusionAssembly<double>;
template class XVectorBaseline<float>;
template class XVectorBaseline<double>;

}  // namespace rhythmid
