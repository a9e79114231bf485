#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "cqte/errors.hpp"

namespace cqte {

// Observed state-treatment-outcome arrays for a temporal switchback panel:
// n days, m intervals per day, d state coordinates.
//
// Immutable after construction / validation; safe to share across threads.
struct PanelDataset {
  int n = 0;
  int m = 0;
  int d = 0;
  Eigen::MatrixXd outcomes;            // n x m, Y(i,t)
  std::vector<Eigen::MatrixXd> states; // m entries, each n x d, S(i,t)
  Eigen::MatrixXi actions;             // n x m, A(i,t) in {0,1}

  // (1, S(i,t), A(i,t)), length d+2.
  Eigen::VectorXd design_row(int i, int t) const;

  // Throws ValidationError on shape mismatch, non-binary action, or
  // degenerate sizes (n >= 2, m >= 2, d >= 1 required).
  void validate() const;

  // Keep intervals [t_lo, t_hi] (0-based, inclusive) and reindex.
  PanelDataset time_window(int t_lo, int t_hi) const;
};

// Spatiotemporal panel: everything above with a region axis, plus the
// adjacency structure and region coordinates used for spatial smoothing.
struct SpatioPanelDataset {
  int n = 0;
  int m = 0;
  int d = 0;
  int r = 0;
  // Indexed [region][...] with the same per-region layout as PanelDataset.
  std::vector<Eigen::MatrixXd> outcomes;              // r entries, n x m
  std::vector<std::vector<Eigen::MatrixXd>> states;   // [r][m], each n x d
  std::vector<Eigen::MatrixXi> actions;               // r entries, n x m
  std::vector<std::vector<int>> neighbors;            // adjacency list per region
  Eigen::MatrixXd coords;                             // r x 2, (lon, lat)

  // Mean of neighbor actions, in [0, 1].
  double neighbor_action_mean(int i, int t, int region) const;

  // (1, S, A, Abar), length d+3.
  Eigen::VectorXd design_row(int i, int t, int region) const;

  // Validates shapes, binary actions, symmetric irreflexive adjacency with
  // no isolated region, finite coordinates, r >= 2.
  void validate() const;

  SpatioPanelDataset time_window(int t_lo, int t_hi) const;

  // View of one region as a temporal panel (neighbor terms dropped).
  PanelDataset region_panel(int region) const;
};

// AB...AB switchback sequence: value `start` on intervals 1..TI, flipped
// every TI intervals. Throws ValidationError when TI > m (constant
// treatment within the day breaks positivity).
std::vector<int> alternating_design(int m, int ti, int start);

// CSV ingestion. Temporal header: day,time,action,outcome,state_1..state_d.
// Spatiotemporal header adds a `region` column after `time` and needs the
// region sidecar (region,lon,lat,neighbors with ';'-separated ids).
// Row order in the file is irrelevant; every error names the offending row.
PanelDataset load_panel_csv(const std::string& path);
SpatioPanelDataset load_spatio_panel_csv(const std::string& data_path,
                                         const std::string& regions_path);

// Writers use max-precision doubles so load(write(ds)) round-trips bit-exactly.
void write_panel_csv(const PanelDataset& ds, const std::string& path);
void write_spatio_panel_csv(const SpatioPanelDataset& ds,
                            const std::string& data_path,
                            const std::string& regions_path);

}  // namespace cqte
