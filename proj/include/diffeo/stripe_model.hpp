#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace diffeo::stripe {

/// Binary task on N(0, I_d) data whose label depends on coordinate 0 only.
///
/// Regions between consecutive boundaries alternate in sign; the region
/// left of the first boundary is -1.
struct StripeTask {
    int d = 30;
    std::vector<double> boundaries{-0.3, 1.18548};
    std::size_t P = 1024;
    std::uint64_t seed = 0;

    void validate() const;
    double label(double x_parallel) const;
};

struct Dataset {
    Eigen::MatrixXd X;  // count x d
    Eigen::VectorXd y;  // +-1
};

/// i.i.d. standard normal points with their stripe labels, drawn from
/// stream (seed, 0).
Dataset generate_stripe_data(const StripeTask& task, std::size_t count, std::uint64_t seed);

/// Training set of task.P points containing both labels. Redraws with the
/// next attempt index when one class is missing.
Dataset training_set(const StripeTask& task);

enum class Activation { ReLU, Linear };

const char* to_string(Activation a) noexcept;
Activation parse_activation(const std::string& name);

struct NetConfig {
    int width = 128;
    Activation activation = Activation::ReLU;
    /// Initial entries: W ~ N(0, w_init^2 / d), b ~ N(0, b_init^2), a ~ N(0, a_init^2).
    double w_init = 1.0;
    double b_init = 1.0;
    double a_init = 1.0;
    /// Output scale; the network output at initialization is subtracted so
    /// training starts from f = 0.
    double alpha = 1.0;

    void validate() const;
};

/// f(x) = alpha * (g(x; W, b, a) - g(x; W0, b0, a0)),
/// g(x) = (1/h) sum_m a_m act(W_m . x + b_m).
class StripeNet {
public:
    StripeNet() = default;
    StripeNet(Eigen::MatrixXd W, Eigen::VectorXd b, Eigen::VectorXd a, Activation act, double alpha);
    /// Random initialization drawn from `seed`.
    static StripeNet initialize(int d, const NetConfig& config, std::uint64_t seed);

    int width() const noexcept { return static_cast<int>(W_.rows()); }
    int dim() const noexcept { return static_cast<int>(W_.cols()); }
    Activation activation() const noexcept { return act_; }
    double alpha() const noexcept { return alpha_; }

    const Eigen::MatrixXd& W() const noexcept { return W_; }
    const Eigen::VectorXd& b() const noexcept { return b_; }
    const Eigen::VectorXd& a() const noexcept { return a_; }
    Eigen::MatrixXd& W() noexcept { return W_; }
    Eigen::VectorXd& b() noexcept { return b_; }
    Eigen::VectorXd& a() noexcept { return a_; }

    /// Freeze the current parameters as the subtracted reference g0.
    void freeze_reference();
    /// Drop the reference so f = alpha * g.
    void clear_reference();
    bool has_reference() const noexcept { return W0_.size() > 0; }

    Eigen::VectorXd forward(const Eigen::MatrixXd& X) const;
    double forward_one(const Eigen::VectorXd& x) const;

    /// Parameters flattened as [W row-major, b, a].
    Eigen::VectorXd parameters() const;
    void set_parameters(const Eigen::VectorXd& theta);

private:
    Eigen::VectorXd raw(const Eigen::MatrixXd& X, const Eigen::MatrixXd& W, const Eigen::VectorXd& b,
                        const Eigen::VectorXd& a) const;

    Eigen::MatrixXd W_;
    Eigen::VectorXd b_, a_;
    Eigen::MatrixXd W0_;
    Eigen::VectorXd b0_, a0_;
    Activation act_ = Activation::ReLU;
    double alpha_ = 1.0;
};

/// Hinge loss (1/(alpha^2 P)) sum max(0, 1 - y f(x)) and its gradient,
/// flattened like StripeNet::parameters().
struct LossGradient {
    double loss = 0.0;
    Eigen::VectorXd gradient;
    std::size_t active = 0;  // points with margin below 1
};

LossGradient hinge_loss_gradient(const StripeNet& net, const Dataset& data);
double hinge_loss(const StripeNet& net, const Dataset& data);

/// Largest relative deviation ||g_analytic - g_fd|| / max(||g_analytic||, ||g_fd||)
/// with central differences of step `eps` on every parameter.
double gradient_check(const StripeNet& net, const Dataset& data, double eps = 1e-5);

struct OptimizerConfig {
    /// Gradient-descent step in units of the width: lr = step * h.
    double step = 1.0;
    int max_steps = 20000;
    /// Loss recorded every `log_every` steps (and at the end).
    int log_every = 10;

    void validate() const;
};

struct TrainResult {
    StripeNet net;
    std::vector<std::pair<int, double>> loss_log;
    int steps = 0;
    bool converged = false;
    double final_loss = 0.0;
    double alignment = 0.0;
};

/// sqrt( sum_m W_m0^2 / mean_{k>=1} sum_m W_mk^2 ) on the trained weights
/// (reference removed): grows as the first layer concentrates on x_par.
double alignment(const StripeNet& net);

/// Full-batch gradient descent on the hinge loss until it reaches 0 or the
/// step cap.
TrainResult train_stripe_net(const StripeTask& task, const NetConfig& net, const OptimizerConfig& opt);
TrainResult train_stripe_net(const Dataset& data, const NetConfig& net, const OptimizerConfig& opt,
                             std::uint64_t init_seed);

/// <|f(x_par, x_perp + nu) - f(x)|^2> / <|f(x + eta) - f(x)|^2> with nu
/// isotropic in the orthogonal subspace, eta isotropic in R^d, both of norm
/// `noise_norm`, mean over `n_probe` fresh points. Throws DegenerateError
/// when the denominator vanishes.
double stripe_relative_stability(const StripeNet& net, const StripeTask& task, std::size_t n_probe,
                                 double noise_norm, std::uint64_t seed);

/// Fraction of `count` fresh points with sign(f) != y (f = 0 counts as wrong).
double test_error(const StripeNet& net, const StripeTask& task, std::size_t count, std::uint64_t seed);

struct ExperimentConfig {
    int d = 30;
    std::vector<double> boundaries{-0.3, 1.18548};
    std::vector<std::size_t> P_values{128, 256, 512, 1024, 2048, 4096, 8192};
    int seeds = 8;
    std::uint64_t master_seed = 0;
    NetConfig net{};
    OptimizerConfig opt{};
    std::size_t n_probe = 4000;
    double noise_norm = 1.0;
    std::size_t n_test = 10000;

    void validate() const;
};

struct RunRecord {
    std::size_t P = 0;
    int seed_index = 0;
    std::uint64_t seed = 0;
    double r_f = 0.0;
    double alignment = 0.0;
    double test_error = 0.0;
    int steps = 0;
    bool converged = false;
};

struct PointSummary {
    std::size_t P = 0;
    double r_f_logmean = 0.0;  // geometric mean over seeds
    double alignment_median = 0.0;
    double test_error_mean = 0.0;
    int converged = 0;
    int runs = 0;
};

struct SlopeFit {
    double slope = 0.0;
    double intercept = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    double r_squared = 0.0;
};

struct ExperimentResult {
    std::vector<RunRecord> runs;
    std::vector<PointSummary> points;
    std::optional<SlopeFit> fit;  // needs at least three P values
};

/// Least-squares line through (x, y) with a 95% t-interval on the slope.
/// Returns nothing for fewer than three points.
std::optional<SlopeFit> fit_line(const std::vector<double>& x, const std::vector<double>& y);

/// Seed of run (P, s): a pure function of the master seed.
std::uint64_t run_seed(std::uint64_t master, std::size_t P, int seed_index);

ExperimentResult run_experiment(const ExperimentConfig& config);

/// Columns P, seed, R_f, alignment, test_error, steps, converged.
std::string runs_to_csv(const std::vector<RunRecord>& runs);

}  // namespace diffeo::stripe
