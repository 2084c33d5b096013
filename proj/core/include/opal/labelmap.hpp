// SPDX-License-Identifier: Apache-2.0
//
// Conditional VAE over the ordered sequence of per-part masks, and the
// composition of decoded masks into a per-pixel part label map.
//
// Encoder: each present 64x64 mask goes through a three-stage strided conv
// stack and a linear lift to 128 features; a bidirectional GRU over the part
// sequence gives H_s. The p x 5 box rows go through a second bidirectional GRU
// (4 units per direction) and a per-row linear lift to H_b. The row mean of
// H_s * H_b is gated by a category embedding and mapped to the latent heads.
//
// Decoder: z is gated by a category embedding and by an embedding of the
// pooled box features, lifted to z_g, replicated once per part and run
// through a bidirectional GRU; a deconv head per present part emits
// two-channel (background, foreground) logits.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "opal/dataset.hpp"
#include "opal/latent.hpp"
#include "opal/nn.hpp"
#include "opal/raster.hpp"

namespace opal::labelmap {

using ad::Matrix;
using ad::Var;
using dataset::Box;

inline constexpr int kMaskSize = 64;
inline constexpr int kMaskPixels = kMaskSize * kMaskSize;
inline constexpr int kCanvasSize = 256;
inline constexpr double kMaskThreshold = 0.5;
inline constexpr double kMaskEpsilon = 1e-7;

/// Masks in canonical order, one row per part of kMaskPixels values in [0, 1].
/// Rows of absent parts are zero.
struct PartMaskSet {
  Matrix masks;
  std::vector<std::uint8_t> presence;

  int p_max() const { return static_cast<int>(masks.rows()); }
  Raster binary(int row, double threshold = kMaskThreshold) const;
};

/// Bilinear resample (pixel centres aligned) followed by a 0.5 threshold. The
/// pixel nearest the source centre of mass is forced on when nothing survives.
/// Throws DegenerateError on an empty mask.
Raster resize_mask(const Raster& mask, int size = kMaskSize);

PartMaskSet mask_set(const dataset::NormalizedInstance& inst, int p_max);

struct LabelMapDims {
  int p_max = 0;
  int num_categories = 0;
  int mask_size = kMaskSize;
  int conv1 = 16;
  int conv2 = 32;
  int conv3 = 64;
  int part_features = 128;
  int sequence_hidden = 64;  // per direction, h_s = 2 x 64
  int box_hidden = 4;        // per direction, h_b = 2 x 4
  int latent = kLatentDim;

  int bottleneck_size() const { return mask_size / 8; }
  int bottleneck_features() const { return conv3 * bottleneck_size() * bottleneck_size(); }
  int mask_pixels() const { return mask_size * mask_size; }

  nlohmann::json to_json() const;
  static LabelMapDims from_json(const nlohmann::json& j);
};

/// Inputs shared by encoder and decoder: the p x 5 box rows
/// [presence, x_min, y_min, x_max, y_max], presence and category.
struct BoxCondition {
  Matrix boxes;
  std::vector<std::uint8_t> presence;
  int category_id = 0;

  static BoxCondition of(const dataset::PartGraph& g) {
    return {g.features, g.presence, g.category_id};
  }
};

struct EncoderState {
  Var h_s;  // p x 128
  Var h_b;  // p x 128
};

class LabelMapVae {
 public:
  LabelMapVae(const LabelMapDims& dims, std::uint64_t seed);

  const LabelMapDims& dims() const { return dims_; }
  nn::ParameterSet& parameters() { return params_; }
  const nn::ParameterSet& parameters() const { return params_; }

  /// Per-part conv features; absent rows are zero and their mask content is
  /// never read.
  Var part_features(const Var& masks, const std::vector<std::uint8_t>& presence) const;
  Var box_features(const Matrix& boxes) const;
  EncoderState encoder_state(const Var& masks, const BoxCondition& cond) const;
  /// Pooled H_s * H_b before the category gate.
  Var pooled_features(const EncoderState& state) const;
  /// Pooled features gated by the category embedding; feeds the latent heads.
  Var gated_features(const EncoderState& state, int category_id) const;
  GaussianVars encode_from_state(const EncoderState& state, int category_id) const;
  GaussianVars encode(const Var& masks, const BoxCondition& cond) const;

  /// p x (2 * mask_pixels) logits: per row, the background plane then the
  /// foreground plane. Rows of absent parts are zero.
  Var decode(const Var& z, const BoxCondition& cond) const;

  GaussianParams encode_params(const PartMaskSet& masks, const BoxCondition& cond) const;
  /// Foreground probabilities for every part (absent rows zero).
  PartMaskSet decode_masks(const Matrix& z, const BoxCondition& cond) const;

 private:
  Var decode_heads(const Var& rows) const;

  LabelMapDims dims_;
  nn::ParameterSet params_;
  nn::Conv2d enc_conv1_;
  nn::Conv2d enc_conv2_;
  nn::Conv2d enc_conv3_;
  nn::Linear enc_lift_;
  nn::BiGru enc_sequence_;
  nn::BiGru box_sequence_;
  nn::Linear box_lift_;
  nn::Gate encoder_category_gate_;
  nn::Linear mu_head_;
  nn::Linear log_var_head_;
  nn::Gate decoder_category_gate_;
  nn::Gate decoder_box_gate_;
  nn::Linear latent_lift_;
  nn::BiGru dec_sequence_;
  nn::Linear dec_lift_;
  nn::ConvTranspose2d dec_deconv1_;
  nn::ConvTranspose2d dec_deconv2_;
  nn::ConvTranspose2d dec_deconv3_;
};

/// Foreground probabilities (p x pixels) from two-channel logits.
Matrix foreground_probabilities(const Matrix& logits);

/// Mean per-pixel cross-entropy over present parts.
Var mask_recon_loss(const Var& logits, const PartMaskSet& target);
double mask_recon_loss(const Matrix& logits, const PartMaskSet& target);

// --- composition --------------------------------------------------------------

struct PixelBox {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;  // exclusive
  int y1 = 0;  // exclusive

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
};

/// Maps a normalized box onto a height x width canvas; not clipped.
PixelBox pixelize(const Box& b, int height, int width);

struct ObjectLayout {
  Raster label_map;  // 0 background, k + 1 for canonical part k
  int category_id = 0;
  std::map<int, Box> boxes;
  std::vector<int> order;
  std::vector<std::string> warnings;

  std::uint64_t hash() const;
  std::vector<int> parts_drawn() const;
  /// True when every pixel labelled k + 1 lies inside the pixelized box of k.
  bool satisfies_containment() const;
  std::vector<std::uint8_t> png() const;
  nlohmann::json sidecar(const dataset::PartSchema& schema) const;
  /// Writes `<stem>.png` and `<stem>.json`.
  void save(const std::filesystem::path& stem, const dataset::PartSchema& schema) const;
};

std::vector<std::uint8_t> layout_palette(int parts);

/// Pastes each present part's thresholded mask, resized to its pixel box, in
/// `order` (later parts overwrite). Parts whose box is empty on the canvas are
/// skipped with a warning.
ObjectLayout compose_layout(const PartMaskSet& masks, const std::map<int, Box>& boxes,
                            const std::vector<int>& order, int category_id,
                            int canvas_height = kCanvasSize, int canvas_width = kCanvasSize);

}  // namespace opal::labelmap
