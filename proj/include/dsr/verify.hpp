#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dsr/gridio.hpp"

namespace dsr {

struct SkillScores {
    double r = 0.0;  // Pearson correlation; see r_defined
    double rmse = 0.0, bias = 0.0, mae = 0.0;
    size_t n = 0;
    bool r_defined = true;  // false when either field is constant
};

/// Pointwise skill over unmasked cells. mask (optional) is nonzero = keep.
SkillScores skill(std::span<const float> pred, std::span<const float> ref,
                  std::span<const uint8_t> mask = {});

/// Non-overlapping sums of `window` consecutive frames; dt must be 3600 s.
GridField accumulate_precip(const GridField& g, const std::string& var,
                            int window = 6);

struct RadialPSD {
    std::vector<double> wavelength_km;  // strictly decreasing
    std::vector<double> power;          // ring-averaged spectral power
    std::vector<size_t> count;          // samples per ring
    double dx_km = 0.0;
};

/// Azimuthally averaged 2D power spectrum on integer wavenumber rings;
/// mean removed first; Hann window optional (on by default).
/// With windowing off, sum(power * count) equals the field variance.
RadialPSD radial_psd(std::span<const float> field, int H, int W, double dx_km,
                     bool hann = true);

struct LeadScores {
    double lead_h = 0.0;
    SkillScores scores;
    bool empty = false;  // no matching observations at this lead
};

/// Pairs each station observation at pred.t0 + lead with the nearest grid
/// cell of the prediction and scores over stations.
std::vector<LeadScores> verify_stations(const GridField& pred,
                                        const std::vector<StationRecord>& stations,
                                        const std::string& var,
                                        const std::vector<double>& lead_hours);

struct ReportRow {
    std::string variable;
    double lead_h = 0.0;
    std::string model;
    SkillScores scores;
};

/// CSV `variable,lead_h,model,r,rmse,bias,mae,n`, sorted (variable, lead, model).
void write_skill_report(const std::string& path, std::vector<ReportRow> rows);

/// CSV `wavelength_km,power`.
void write_psd_report(const std::string& path, const RadialPSD& psd);

}  // namespace dsr
