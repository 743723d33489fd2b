#pragma once

#include <string>

#include "ffmerge/model.hpp"
#include "ffmerge/tensor.hpp"

namespace ffmerge {

struct CkaMatrix {
  Matrix values;  // L × L over the layers of the activation set, in index order
  Tap tap = Tap::ff_out;
  std::vector<std::size_t> layers;
  std::size_t sample_count = 0;
};

// Linear CKA with column-centered X̃, Ỹ:
//   ‖Ỹᵀ X̃‖²_F / (‖X̃ᵀ X̃‖_F · ‖Ỹᵀ Ỹ‖_F)
// Zero when either side has no variance.
double linear_cka(const Matrix& x, const Matrix& y);

CkaMatrix cka_matrix(const ActivationSet& acts);

// L rows of L comma-separated values, 6 significant digits.
std::string to_csv(const CkaMatrix& cka);
Json to_json(const CkaMatrix& cka);

}  // namespace ffmerge
