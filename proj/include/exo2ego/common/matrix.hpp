// SPDX-FileCopyrightText: (c) 2026 exo2ego contributors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

namespace exo2ego {

/// Dense row-major matrix. Feature sequences are (frames, features).
template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
bool all_finite(const Matrix<T>& m) {
    return m.allFinite();
}

}  // namespace exo2ego
