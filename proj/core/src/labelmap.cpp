// SPDX-License-Identifier: Apache-2.0
#include "opal/labelmap.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "opal/error.hpp"
#include "opal/hash.hpp"

namespace opal::labelmap {

using ad::Index;

Raster PartMaskSet::binary(int row, double threshold) const {
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(masks.cols()))));
  Raster out(side, side);
  for (Index i = 0; i < masks.cols(); ++i) {
    out.pixels[static_cast<std::size_t>(i)] = masks(row, i) >= threshold ? 1 : 0;
  }
  return out;
}

Raster resize_mask(const Raster& mask, int size) {
  require(size > 0, "resize_mask: size must be positive");
  if (mask.height <= 0 || mask.width <= 0 || mask.empty_foreground()) {
    throw DegenerateError("resize_mask: mask has no foreground");
  }
  const double sy = static_cast<double>(mask.height) / size;
  const double sx = static_cast<double>(mask.width) / size;
  auto sample = [&](int y, int x) {
    y = std::clamp(y, 0, mask.height - 1);
    x = std::clamp(x, 0, mask.width - 1);
    return mask.at(y, x) != 0 ? 1.0 : 0.0;
  };
  Raster out(size, size);
  for (int y = 0; y < size; ++y) {
    const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
    const int y0 = static_cast<int>(fy);
    const double wy = fy - y0;
    for (int x = 0; x < size; ++x) {
      const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
      const int x0 = static_cast<int>(fx);
      const double wx = fx - x0;
      const double v = (1 - wy) * ((1 - wx) * sample(y0, x0) + wx * sample(y0, x0 + 1)) +
                       wy * ((1 - wx) * sample(y0 + 1, x0) + wx * sample(y0 + 1, x0 + 1));
      out.at(y, x) = v >= kMaskThreshold ? 1 : 0;
    }
  }
  if (out.empty_foreground()) {
    double cy = 0.0, cx = 0.0;
    double n = 0.0;
    for (int y = 0; y < mask.height; ++y) {
      for (int x = 0; x < mask.width; ++x) {
        if (mask.at(y, x) == 0) continue;
        cy += y + 0.5;
        cx += x + 0.5;
        n += 1.0;
      }
    }
    const int py = std::clamp(static_cast<int>(cy / n / sy), 0, size - 1);
    const int px = std::clamp(static_cast<int>(cx / n / sx), 0, size - 1);
    out.at(py, px) = 1;
  }
  return out;
}

PartMaskSet mask_set(const dataset::NormalizedInstance& inst, int p_max) {
  PartMaskSet set;
  set.masks = Matrix::Zero(p_max, kMaskPixels);
  set.presence.assign(static_cast<std::size_t>(p_max), 0);
  for (const auto& [k, mask] : inst.part_masks) {
    require(k >= 0 && k < p_max, "mask_set: part index out of range");
    const Raster r = resize_mask(mask, kMaskSize);
    for (int i = 0; i < kMaskPixels; ++i) set.masks(k, i) = r.pixels[static_cast<std::size_t>(i)];
    set.presence[static_cast<std::size_t>(k)] = 1;
  }
  return set;
}

nlohmann::json LabelMapDims::to_json() const {
  return {{"p_max", p_max},
          {"num_categories", num_categories},
          {"mask_size", mask_size},
          {"conv", {conv1, conv2, conv3}},
          {"part_features", part_features},
          {"sequence_hidden", sequence_hidden},
          {"box_hidden", box_hidden},
          {"latent", latent}};
}

LabelMapDims LabelMapDims::from_json(const nlohmann::json& j) {
  LabelMapDims d;
  d.p_max = j.at("p_max").get<int>();
  d.num_categories = j.at("num_categories").get<int>();
  d.mask_size = j.value("mask_size", d.mask_size);
  if (j.contains("conv")) {
    const auto c = j.at("conv").get<std::vector<int>>();
    if (c.size() != 3) throw ConfigError("labelmap dims: conv needs three widths");
    d.conv1 = c[0];
    d.conv2 = c[1];
    d.conv3 = c[2];
  }
  d.part_features = j.value("part_features", d.part_features);
  d.sequence_hidden = j.value("sequence_hidden", d.sequence_hidden);
  d.box_hidden = j.value("box_hidden", d.box_hidden);
  d.latent = j.value("latent", d.latent);
  return d;
}

LabelMapVae::LabelMapVae(const LabelMapDims& dims, std::uint64_t seed) : dims_(dims) {
  require(dims.p_max > 0 && dims.num_categories > 0, "LabelMapVae needs p_max and categories");
  require(dims.mask_size % 8 == 0, "mask size must be divisible by 8");
  Rng rng(seed);
  const int s = dims.mask_size;
  const int h_s = 2 * dims.sequence_hidden;
  const int b = dims.bottleneck_size();
  enc_conv1_ = nn::Conv2d(params_, "encoder.conv1", 1, dims.conv1, s, s, 4, 2, 1, rng);
  enc_conv2_ = nn::Conv2d(params_, "encoder.conv2", dims.conv1, dims.conv2, s / 2, s / 2, 4, 2, 1, rng);
  enc_conv3_ = nn::Conv2d(params_, "encoder.conv3", dims.conv2, dims.conv3, s / 4, s / 4, 4, 2, 1, rng);
  enc_lift_ = nn::Linear(params_, "encoder.part_lift", dims.bottleneck_features(), dims.part_features, rng);
  enc_sequence_ = nn::BiGru(params_, "encoder.sequence", dims.part_features, dims.sequence_hidden, rng);
  box_sequence_ = nn::BiGru(params_, "boxes.sequence", 5, dims.box_hidden, rng);
  box_lift_ = nn::Linear(params_, "boxes.lift", 2 * dims.box_hidden, h_s, rng);
  encoder_category_gate_ = nn::Gate(params_, "encoder.category_gate", dims.num_categories, h_s, rng);
  mu_head_ = nn::Linear(params_, "encoder.mu", h_s, dims.latent, rng);
  log_var_head_ = nn::Linear(params_, "encoder.log_var", h_s, dims.latent, rng);
  decoder_category_gate_ =
      nn::Gate(params_, "decoder.category_gate", dims.num_categories, dims.latent, rng);
  decoder_box_gate_ = nn::Gate(params_, "decoder.box_gate", h_s, dims.latent, rng);
  latent_lift_ = nn::Linear(params_, "decoder.latent_lift", dims.latent, dims.latent, rng);
  dec_sequence_ = nn::BiGru(params_, "decoder.sequence", dims.latent, dims.sequence_hidden, rng);
  dec_lift_ = nn::Linear(params_, "decoder.part_lift", h_s, dims.bottleneck_features(), rng);
  dec_deconv1_ = nn::ConvTranspose2d(params_, "decoder.deconv1", dims.conv3, dims.conv2, b, b, 4, 2, 1, rng);
  dec_deconv2_ =
      nn::ConvTranspose2d(params_, "decoder.deconv2", dims.conv2, dims.conv1, 2 * b, 2 * b, 4, 2, 1, rng);
  dec_deconv3_ = nn::ConvTranspose2d(params_, "decoder.deconv3", dims.conv1, 2, 4 * b, 4 * b, 4, 2, 1, rng);
}

namespace {

std::vector<Index> present_rows(const std::vector<std::uint8_t>& presence) {
  std::vector<Index> rows;
  for (std::size_t k = 0; k < presence.size(); ++k) {
    if (presence[k]) rows.push_back(static_cast<Index>(k));
  }
  return rows;
}

}  // namespace

Var LabelMapVae::part_features(const Var& masks, const std::vector<std::uint8_t>& presence) const {
  const Index p = dims_.p_max;
  require(masks.rows() == p && masks.cols() == dims_.mask_pixels(), "part_features: masks must be p x pixels");
  require(static_cast<Index>(presence.size()) == p, "part_features: presence must have p entries");
  const auto rows = present_rows(presence);
  if (rows.empty()) return ad::constant(Matrix::Zero(p, dims_.part_features));
  Var h = ad::gather_rows(masks, rows);
  h = ad::relu(enc_conv1_(h));
  h = ad::relu(enc_conv2_(h));
  h = ad::relu(enc_conv3_(h));
  h = ad::relu(enc_lift_(h));
  return ad::scatter_rows(h, rows, p);
}

Var LabelMapVae::box_features(const Matrix& boxes) const {
  require(boxes.rows() == dims_.p_max && boxes.cols() == 5, "box_features: boxes must be p x 5");
  return box_lift_(box_sequence_(ad::constant(boxes)));
}

EncoderState LabelMapVae::encoder_state(const Var& masks, const BoxCondition& cond) const {
  return {enc_sequence_(part_features(masks, cond.presence)), box_features(cond.boxes)};
}

Var LabelMapVae::pooled_features(const EncoderState& state) const {
  return ad::mean_rows(ad::mul(state.h_s, state.h_b));
}

Var LabelMapVae::gated_features(const EncoderState& state, int category_id) const {
  const Var gate =
      encoder_category_gate_(ad::constant(nn::one_hot(category_id - 1, dims_.num_categories)));
  return ad::mul(pooled_features(state), gate);
}

GaussianVars LabelMapVae::encode_from_state(const EncoderState& state, int category_id) const {
  const Var h = gated_features(state, category_id);
  return {mu_head_(h), log_var_head_(h)};
}

GaussianVars LabelMapVae::encode(const Var& masks, const BoxCondition& cond) const {
  return encode_from_state(encoder_state(masks, cond), cond.category_id);
}

Var LabelMapVae::decode_heads(const Var& rows) const {
  Var h = ad::relu(dec_lift_(rows));
  h = ad::relu(dec_deconv1_(h));
  h = ad::relu(dec_deconv2_(h));
  return dec_deconv3_(h);
}

Var LabelMapVae::decode(const Var& z, const BoxCondition& cond) const {
  const Index p = dims_.p_max;
  require(z.rows() == 1 && z.cols() == dims_.latent, "decode expects a 1 x latent z");
  require(static_cast<Index>(cond.presence.size()) == p, "decode: presence must have p entries");
  const Var alpha_c =
      decoder_category_gate_(ad::constant(nn::one_hot(cond.category_id - 1, dims_.num_categories)));
  const Var alpha_bb = decoder_box_gate_(ad::mean_rows(box_features(cond.boxes)));
  const Var z_g = ad::relu(latent_lift_(ad::mul(ad::mul(z, alpha_c), alpha_bb)));
  const Var states = dec_sequence_(ad::replicate_rows(z_g, p));
  const auto rows = present_rows(cond.presence);
  if (rows.empty()) return ad::constant(Matrix::Zero(p, 2 * dims_.mask_pixels()));
  return ad::scatter_rows(decode_heads(ad::gather_rows(states, rows)), rows, p);
}

GaussianParams LabelMapVae::encode_params(const PartMaskSet& masks, const BoxCondition& cond) const {
  ad::NoGradGuard guard;
  return encode(ad::constant(masks.masks), cond).values();
}

PartMaskSet LabelMapVae::decode_masks(const Matrix& z, const BoxCondition& cond) const {
  ad::NoGradGuard guard;
  const Matrix logits = decode(ad::constant(z), cond).value();
  PartMaskSet out{foreground_probabilities(logits), cond.presence};
  for (std::size_t k = 0; k < cond.presence.size(); ++k) {
    if (!cond.presence[k]) out.masks.row(static_cast<Index>(k)).setZero();
  }
  return out;
}

Matrix foreground_probabilities(const Matrix& logits) {
  require(logits.cols() % 2 == 0, "logits must hold two planes per row");
  const Index n = logits.cols() / 2;
  // softmax over two channels reduces to a sigmoid of the logit difference.
  Matrix diff = logits.rightCols(n) - logits.leftCols(n);
  return diff.unaryExpr([](double d) { return 1.0 / (1.0 + std::exp(-d)); });
}

Var mask_recon_loss(const Var& logits, const PartMaskSet& target) {
  const Index p = target.masks.rows();
  const Index n = target.masks.cols();
  require(logits.rows() == p && logits.cols() == 2 * n, "mask_recon_loss: shape mismatch");
  const auto rows = present_rows(target.presence);
  if (rows.empty()) return ad::constant(Matrix::Zero(1, 1));
  Matrix one_hot(static_cast<Index>(rows.size()), 2 * n);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto fg = target.masks.row(rows[i]).array().min(1.0).max(0.0);
    one_hot.row(static_cast<Index>(i)).leftCols(n) = (1.0 - fg).matrix();
    one_hot.row(static_cast<Index>(i)).rightCols(n) = fg.matrix();
  }
  const Var log_probs = ad::log_softmax_channels(ad::gather_rows(logits, rows), 2);
  const double count = static_cast<double>(rows.size()) * static_cast<double>(n);
  return ad::scale(ad::sum(ad::mul(log_probs, ad::constant(one_hot))), -1.0 / count);
}

double mask_recon_loss(const Matrix& logits, const PartMaskSet& target) {
  ad::NoGradGuard guard;
  return mask_recon_loss(ad::constant(logits), target).item();
}

// --- composition --------------------------------------------------------------

PixelBox pixelize(const Box& b, int height, int width) {
  auto to_px = [](double v, int size) {
    return static_cast<int>(std::lround((v + 1.0) * 0.5 * size));
  };
  return {to_px(b.x_min, width), to_px(b.y_min, height), to_px(b.x_max, width),
          to_px(b.y_max, height)};
}

std::uint64_t ObjectLayout::hash() const {
  std::uint64_t h = kFnvOffset;
  const std::int32_t dims[2] = {label_map.height, label_map.width};
  h = fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(dims), sizeof(dims)), h);
  return fnv1a64(std::span(label_map.pixels), h);
}

std::vector<int> ObjectLayout::parts_drawn() const {
  std::vector<int> parts;
  std::vector<bool> seen(256, false);
  for (std::uint8_t v : label_map.pixels) seen[v] = true;
  for (int v = 1; v < 256; ++v) {
    if (seen[static_cast<std::size_t>(v)]) parts.push_back(v - 1);
  }
  return parts;
}

bool ObjectLayout::satisfies_containment() const {
  for (int y = 0; y < label_map.height; ++y) {
    for (int x = 0; x < label_map.width; ++x) {
      const int v = label_map.at(y, x);
      if (v == 0) continue;
      const auto it = boxes.find(v - 1);
      if (it == boxes.end()) return false;
      if (!pixelize(it->second, label_map.height, label_map.width).contains(x, y)) return false;
    }
  }
  return true;
}

std::vector<std::uint8_t> layout_palette(int parts) {
  require(parts >= 0 && parts < 256, "layout_palette: too many parts");
  static constexpr std::uint8_t kBase[][3] = {
      {230, 25, 75},  {60, 180, 75},  {255, 225, 25}, {0, 130, 200},  {245, 130, 48},
      {145, 30, 180}, {70, 240, 240}, {240, 50, 230}, {210, 245, 60}, {250, 190, 212},
      {0, 128, 128},  {220, 190, 255}, {170, 110, 40}, {128, 0, 0},   {170, 255, 195},
      {128, 128, 0}};
  std::vector<std::uint8_t> palette = {0, 0, 0};
  for (int k = 0; k < parts; ++k) {
    const auto& c = kBase[k % 16];
    palette.insert(palette.end(), {c[0], c[1], c[2]});
  }
  return palette;
}

std::vector<std::uint8_t> ObjectLayout::png() const {
  int max_label = 0;
  for (const auto& [k, box] : boxes) max_label = std::max(max_label, k + 1);
  for (std::uint8_t v : label_map.pixels) max_label = std::max(max_label, static_cast<int>(v));
  return encode_png_indexed(label_map, layout_palette(max_label));
}

nlohmann::json ObjectLayout::sidecar(const dataset::PartSchema& schema) const {
  auto name = [&](int k) {
    return k < schema.part_count() ? schema.part_names[static_cast<std::size_t>(k)]
                                   : std::to_string(k);
  };
  nlohmann::json parts = nlohmann::json::array();
  nlohmann::json box_json = nlohmann::json::object();
  for (const auto& [k, b] : boxes) {
    parts.push_back(name(k));
    box_json[name(k)] = dataset::to_json(b);
  }
  nlohmann::json order_json = nlohmann::json::array();
  for (int k : order) order_json.push_back(name(k));
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(hash()));
  return {{"category", schema.category_name},
          {"category_id", category_id},
          {"parts", parts},
          {"boxes", box_json},
          {"order", order_json},
          {"canvas", {label_map.height, label_map.width}},
          {"hash", hex},
          {"warnings", warnings}};
}

void ObjectLayout::save(const std::filesystem::path& stem, const dataset::PartSchema& schema) const {
  auto png_path = stem;
  png_path += ".png";
  auto json_path = stem;
  json_path += ".json";
  const auto bytes = png();
  std::ofstream png_out(png_path, std::ios::binary);
  if (!png_out) throw Error("cannot write " + png_path.string());
  png_out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  std::ofstream json_out(json_path);
  if (!json_out) throw Error("cannot write " + json_path.string());
  json_out << sidecar(schema).dump(2) << '\n';
}

ObjectLayout compose_layout(const PartMaskSet& masks, const std::map<int, Box>& boxes,
                            const std::vector<int>& order, int category_id, int canvas_height,
                            int canvas_width) {
  require(canvas_height > 0 && canvas_width > 0, "compose_layout: empty canvas");
  ObjectLayout layout;
  layout.label_map = Raster(canvas_height, canvas_width);
  layout.category_id = category_id;
  layout.order = order;
  for (int k : order) {
    if (k < 0 || k >= masks.p_max() || !masks.presence[static_cast<std::size_t>(k)]) continue;
    const auto it = boxes.find(k);
    if (it == boxes.end()) {
      layout.warnings.push_back("part " + std::to_string(k) + " has no box");
      continue;
    }
    layout.boxes[k] = it->second;
    const PixelBox px = pixelize(it->second, canvas_height, canvas_width);
    const int cx0 = std::max(px.x0, 0), cy0 = std::max(px.y0, 0);
    const int cx1 = std::min(px.x1, canvas_width), cy1 = std::min(px.y1, canvas_height);
    if (px.width() <= 0 || px.height() <= 0 || cx1 <= cx0 || cy1 <= cy0) {
      layout.warnings.push_back("part " + std::to_string(k) + " box is empty on the canvas");
      continue;
    }
    const Raster mask = resize_nearest(masks.binary(k), px.height(), px.width());
    for (int y = cy0; y < cy1; ++y) {
      for (int x = cx0; x < cx1; ++x) {
        if (mask.at(y - px.y0, x - px.x0)) layout.label_map.at(y, x) = static_cast<std::uint8_t>(k + 1);
      }
    }
  }
  return layout;
}

}  // namespace opal::labelmap
