#pragma once

#include <Eigen/Dense>

#include <cstdarg>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace fade {

// Row-major everywhere: tensors on disk are row-major (torch layout) and we
// map them without copies.
using Mat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXf;
using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using VecD = Eigen::VectorXd;

enum class ErrorCode {
    invalid_argument = 1,
    precondition = 2,
    io = 3,
    bad_weights = 4,
    internal = 5,
};

class Error : public std::runtime_error {
  public:
    Error(ErrorCode code, std::string msg) : std::runtime_error(std::move(msg)), code_(code) {}
    ErrorCode code() const { return code_; }

  private:
    ErrorCode code_;
};

[[noreturn]] void raise(ErrorCode code, const char* fmt, ...);

#define FADE_CHECK(cond, code, ...)                                                                \
    do {                                                                                           \
        if (!(cond)) ::fade::raise(code, __VA_ARGS__);                                             \
    } while (0)

void log_info(const char* fmt, ...);
void log_warn(const char* fmt, ...);

// Compensated (Neumaier) summation. Keeps small-N reductions effectively
// exact, so results do not depend on summand order.
class KahanSum {
  public:
    void add(double x) {
        double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x))
            comp_ += (sum_ - t) + x;
        else
            comp_ += (x - t) + sum_;
        sum_ = t;
    }
    double value() const { return sum_ + comp_; }

  private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

inline double dot_compensated(const float* a, const float* b, int n) {
    KahanSum s;
    for (int i = 0; i < n; ++i) s.add(static_cast<double>(a[i]) * static_cast<double>(b[i]));
    return s.value();
}

// L2-normalizes rows in place; zero rows are left untouched.
void normalize_rows(Mat& m);
Vec normalized(const Vec& v);

std::string lowercase(const std::string& s);
std::vector<std::string> split(const std::string& s, char sep);
std::string join(const std::vector<std::string>& parts, const std::string& sep);
bool starts_with(const std::string& s, const std::string& prefix);
std::string trim(const std::string& s);

}  // namespace fade
