#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "modelspace/model_space.hpp"

namespace modelspace {

enum class Linkage { Average, Single, Complete };

std::string_view to_string(Linkage linkage);
Linkage linkage_from_string(std::string_view name);

// How an affinity matrix is turned into a dissimilarity for clustering.
enum class Dissimilarity {
  Inverse,      // d = 1 / s, the model-space distance
  OneMinus,     // d = 1 - s
};

std::string_view to_string(Dissimilarity d);
Dissimilarity dissimilarity_from_string(std::string_view name);

// Binary merge tree. Nodes [0, N) are leaves; node N + k is the k-th merge.
struct Dendrogram {
  struct Node {
    std::string label;     // leaves only
    int left = -1;         // children of internal nodes
    int right = -1;
    double height = 0.0;   // merge distance; 0 for leaves
  };

  std::vector<Node> nodes;
  std::size_t leaf_count = 0;
  bool replaced_infinite = false;  // +inf entries were capped before merging

  std::size_t root() const { return nodes.size() - 1; }
  bool is_leaf(std::size_t node) const { return node < leaf_count; }
  // Lexicographically smallest leaf label under `node`.
  const std::string& min_label(std::size_t node) const;
  std::vector<std::string> leaves(std::size_t node) const;
};

// Bottom-up merging; each step joins the pair with the smallest linkage
// distance, ties broken by the lexicographically smallest (label_a, label_b)
// pair where a cluster's label is its smallest leaf id. Input order does not
// affect the result. +inf entries are replaced by 10x the largest finite one.
Dendrogram agglomerate(const LabeledMatrix& distances, Linkage linkage = Linkage::Average);

// Clustering input built from an affinity matrix.
LabeledMatrix dissimilarity_matrix(const AffinityMatrix& affinity, Dissimilarity kind);

// Newick with branch length = parent height - child height; children ordered
// by their smallest leaf label.
std::string to_newick(const Dendrogram& tree);
// Parses Newick as written by to_newick (labels, branch lengths); [comments]
// are skipped.
Dendrogram parse_newick(std::string_view text);

// Undoes the last (clusters - 1) merges; returns leaf label groups, each
// sorted, groups ordered by their smallest label.
std::vector<std::vector<std::string>> cut_tree(const Dendrogram& tree, std::size_t clusters);

// Indented one-node-per-line rendering for terminals.
std::string render_text(const Dendrogram& tree);

}  // namespace modelspace
