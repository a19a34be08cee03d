#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "mepoi/geo.hpp"
#include "mepoi/optim.hpp"
#include "mepoi/tape.hpp"

namespace mepoi {

struct EncoderConfig {
  int space_scales = 64;  // location code width is 6 per scale
  int time_dim = 64;      // per time attribute; hour and day each get a block
  double lambda_min = 0.1;
  double lambda_max = 1.4142135623730951;  // unit-square diagonal

  int location_dim() const { return 6 * space_scales; }
  int hidden_dim() const { return location_dim() + 2 * time_dim; }
};

// Maps a coordinate into the unit square spanned by the bounding box,
// clamping anything that strays outside.
inline std::pair<double, double> normalize_xy(const BBox& b, double lat, double lon) {
  const double x = (lon - b.min_lon) / (b.max_lon - b.min_lon);
  const double y = (lat - b.min_lat) / (b.max_lat - b.min_lat);
  return {std::clamp(x, 0.0, 1.0), std::clamp(y, 0.0, 1.0)};
}

// Parameter-free periodic location code: the point is projected onto three
// unit directions 120 degrees apart and each projection is read off at a
// geometric ladder of wavelengths as a sin/cos pair. Nearby points share the
// coarse scales and separate in the fine ones.
template <typename T>
Tensor<T> encode_locations(const std::vector<std::pair<double, double>>& xy, const EncoderConfig& cfg) {
  check(cfg.space_scales >= 1, "space_scales must be at least 1");
  const i64 n = static_cast<i64>(xy.size());
  const i64 d = cfg.location_dim();
  Tensor<T> out = Tensor<T>::zeros({n, d});
  constexpr double kPi = 3.14159265358979323846;
  const double dirs[3][2] = {{1.0, 0.0}, {-0.5, 0.8660254037844386}, {-0.5, -0.8660254037844386}};
  for (i64 r = 0; r < n; ++r) {
    i64 c = 0;
    for (int s = 0; s < cfg.space_scales; ++s) {
      const double frac = cfg.space_scales == 1 ? 0.0 : static_cast<double>(s) / (cfg.space_scales - 1);
      const double lambda = cfg.lambda_min * std::pow(cfg.lambda_max / cfg.lambda_min, frac);
      for (const auto& dir : dirs) {
        const double proj = xy[static_cast<std::size_t>(r)].first * dir[0] + xy[static_cast<std::size_t>(r)].second * dir[1];
        const double angle = 2.0 * kPi * proj / lambda;
        out.at(r, c++) = static_cast<T>(std::sin(angle));
        out.at(r, c++) = static_cast<T>(std::cos(angle));
      }
    }
  }
  return out;
}

// Learned periodic features over one scalar attribute: a linear component
// plus sinusoids. Frequencies start at a geometric ladder of full cycles per
// unit but are free to move during training.
template <typename T>
class Time2VecEncoder {
 public:
  Time2VecEncoder(ParamStore<T>& store, const std::string& prefix, int dim) {
    check(dim >= 2, "time encoder needs at least one periodic component");
    Tensor<T> omega = Tensor<T>::zeros({dim});
    Tensor<T> phi = Tensor<T>::zeros({dim});
    omega.data()[0] = T(1);
    constexpr double kTwoPi = 6.283185307179586476925286766559;
    for (int i = 1; i < dim; ++i) {
      omega.data()[i] = static_cast<T>(kTwoPi * std::pow(2.0, i - 1));
    }
    omega_ = &store.add(prefix + ".omega", std::move(omega));
    phi_ = &store.add(prefix + ".phi", std::move(phi));
  }

  Value<T> encode(Tape<T>& tape, const Tensor<T>& tau) const {
    return ops::time2vec_block(tape, tau, tape.leaf(*omega_), tape.leaf(*phi_));
  }

 private:
  Param<T>* omega_;
  Param<T>* phi_;
};

// Classic sinusoidal position table; the sin/cos of a pair share one
// frequency.
template <typename T>
Tensor<T> sinusoidal_pe(i64 positions, i64 dim) {
  check(positions >= 1 && dim >= 2, "positional table needs positions >= 1 and dim >= 2");
  Tensor<T> out = Tensor<T>::zeros({positions, dim});
  for (i64 pos = 0; pos < positions; ++pos) {
    for (i64 k = 0; k + 1 < dim; k += 2) {
      const double rate = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(dim));
      const double angle = static_cast<double>(pos) * rate;
      out.at(pos, k) = static_cast<T>(std::sin(angle));
      out.at(pos, k + 1) = static_cast<T>(std::cos(angle));
    }
    if (dim % 2 == 1) {
      const double rate = std::exp(-std::log(10000.0) * static_cast<double>(dim - 1) / static_cast<double>(dim));
      out.at(pos, dim - 1) = static_cast<T>(std::sin(static_cast<double>(pos) * rate));
    }
  }
  return out;
}

// One visit, ready for encoding: coordinates in the unit square, time
// fractions in [0, 1).
struct VisitFeature {
  double x = 0.0;
  double y = 0.0;
  double hour = 0.0;  // fraction of the day
  double day = 0.0;   // fraction of the week
};

// Assembles per-visit inputs for the sequence model: location code, two time
// blocks, then the position-in-window signal added on top. Rows come in
// window-major order with padded slots included, so the position of row r is
// simply r mod window.
template <typename T>
class VisitEncoder {
 public:
  VisitEncoder(ParamStore<T>& store, const EncoderConfig& cfg)
      : cfg_(cfg), hour_(store, "encoder.hour", cfg.time_dim), day_(store, "encoder.day", cfg.time_dim) {}

  const EncoderConfig& config() const { return cfg_; }

  Value<T> encode(Tape<T>& tape, const std::vector<VisitFeature>& rows, i64 window) const {
    const i64 n = static_cast<i64>(rows.size());
    check(n > 0, "encode: empty batch");
    check(window >= 1 && n % window == 0, "encode: row count must be a multiple of the window length");

    std::vector<std::pair<double, double>> xy(rows.size());
    Tensor<T> tau_h = Tensor<T>::zeros({n});
    Tensor<T> tau_d = Tensor<T>::zeros({n});
    for (i64 r = 0; r < n; ++r) {
      const VisitFeature& v = rows[static_cast<std::size_t>(r)];
      xy[static_cast<std::size_t>(r)] = {v.x, v.y};
      tau_h.data()[r] = static_cast<T>(v.hour);
      tau_d.data()[r] = static_cast<T>(v.day);
    }

    const Tensor<T> pe = sinusoidal_pe<T>(window, cfg_.hidden_dim());
    Tensor<T> pe_rows = Tensor<T>::zeros({n, static_cast<i64>(cfg_.hidden_dim())});
    for (i64 r = 0; r < n; ++r) {
      for (i64 c = 0; c < pe.cols(); ++c) pe_rows.at(r, c) = pe.at(r % window, c);
    }

    Value<T> feats = ops::concat_cols<T>({tape.constant(encode_locations<T>(xy, cfg_)),
                                          hour_.encode(tape, tau_h), day_.encode(tape, tau_d)});
    return ops::add(feats, tape.constant(pe_rows));
  }

 private:
  EncoderConfig cfg_;
  Time2VecEncoder<T> hour_;
  Time2VecEncoder<T> day_;
};

}  // namespace mepoi
