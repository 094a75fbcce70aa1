#pragma once

#include <span>
#include <string>

#include <Eigen/Core>

namespace w4p {

// l(i,j) = 1 when row i and column j share an identity; true_match is the
// row-normalized q(i,j) = l(i,j) / sum_k l(i,k).
struct MatchLabelMatrix {
  Eigen::MatrixXd labels;
  Eigen::MatrixXd true_match;

  Eigen::Index rows() const { return labels.rows(); }
  Eigen::Index cols() const { return labels.cols(); }

  // Labels for the reverse direction (columns as rows).
  MatchLabelMatrix transposed() const;
};

// Throws ErrorKind::InvalidArgument on empty inputs and on any row without a
// positive column (q would divide by zero).
MatchLabelMatrix build_match_labels(std::span<const std::string> row_ids, std::span<const std::string> col_ids);

// Row-normalizes a binary label matrix; same degenerate-row rule.
MatchLabelMatrix labels_from_matrix(Eigen::MatrixXd labels);

}  // namespace w4p
