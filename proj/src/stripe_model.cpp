#include "diffeo/stripe_model.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

#include "diffeo/errors.hpp"
#include "diffeo/rng.hpp"

namespace diffeo::stripe {

namespace {

Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols, double scale, RandomStream& rng) {
    Eigen::MatrixXd m(rows, cols);
    // Row-major draw order so the stream maps to W_m rows.
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = scale * rng.normal();
    return m;
}

Eigen::VectorXd normal_vector(Eigen::Index n, double scale, RandomStream& rng) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = scale * rng.normal();
    return v;
}

// Isotropic unit-norm rows scaled to `norm`; coordinate 0 forced to zero when
// `orthogonal` (then isotropic in the remaining d-1 directions).
Eigen::MatrixXd sphere_rows(Eigen::Index count, int d, double norm, bool orthogonal, RandomStream& rng) {
    Eigen::MatrixXd m(count, d);
    for (Eigen::Index r = 0; r < count; ++r) {
        double ss = 0.0;
        while (ss == 0.0) {
            for (int c = 0; c < d; ++c) m(r, c) = (orthogonal && c == 0) ? 0.0 : rng.normal();
            ss = m.row(r).squaredNorm();
        }
        m.row(r) *= norm / std::sqrt(ss);
    }
    return m;
}

}  // namespace

void StripeTask::validate() const {
    if (d < 2) throw ParameterError("stripe task needs d >= 2");
    if (boundaries.empty()) throw ParameterError("stripe task needs at least one boundary");
    for (std::size_t i = 0; i < boundaries.size(); ++i) {
        if (!std::isfinite(boundaries[i])) throw ParameterError("stripe boundaries must be finite");
        if (i > 0 && !(boundaries[i] > boundaries[i - 1]))
            throw ParameterError("stripe boundaries must be strictly increasing");
    }
    if (P < 2) throw ParameterError("stripe task needs P >= 2");
}

double StripeTask::label(double x_parallel) const {
    const auto above = std::upper_bound(boundaries.begin(), boundaries.end(), x_parallel) - boundaries.begin();
    return above % 2 == 0 ? -1.0 : 1.0;
}

Dataset generate_stripe_data(const StripeTask& task, std::size_t count, std::uint64_t seed) {
    if (count < 1) throw ParameterError("stripe data count must be >= 1");
    RandomStream rng(seed, 0);
    Dataset ds;
    ds.X = normal_matrix(static_cast<Eigen::Index>(count), task.d, 1.0, rng);
    ds.y.resize(static_cast<Eigen::Index>(count));
    for (Eigen::Index i = 0; i < ds.X.rows(); ++i) ds.y(i) = task.label(ds.X(i, 0));
    return ds;
}

Dataset training_set(const StripeTask& task) {
    task.validate();
    for (std::uint64_t attempt = 0; attempt < 1000; ++attempt) {
        Dataset ds = generate_stripe_data(task, task.P, derive_seed(task.seed, seed_domain::data, attempt));
        if (ds.y.maxCoeff() > 0 && ds.y.minCoeff() < 0) return ds;
    }
    throw DegenerateError("could not draw a training set containing both labels");
}

const char* to_string(Activation a) noexcept { return a == Activation::Linear ? "linear" : "relu"; }

Activation parse_activation(const std::string& name) {
    if (name == "relu") return Activation::ReLU;
    if (name == "linear") return Activation::Linear;
    throw ParameterError("unknown activation '" + name + "' (expected relu or linear)");
}

void NetConfig::validate() const {
    if (width < 1) throw ParameterError("net width must be >= 1");
    for (double s : {w_init, b_init, a_init})
        if (!(s >= 0.0) || !std::isfinite(s)) throw ParameterError("init scales must be finite and >= 0");
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ParameterError("alpha must be positive");
}

StripeNet::StripeNet(Eigen::MatrixXd W, Eigen::VectorXd b, Eigen::VectorXd a, Activation act, double alpha)
    : W_(std::move(W)), b_(std::move(b)), a_(std::move(a)), act_(act), alpha_(alpha) {
    if (W_.rows() < 1 || W_.cols() < 1) throw ParameterError("stripe net needs a non-empty first layer");
    if (b_.size() != W_.rows() || a_.size() != W_.rows()) throw ParameterError("stripe net shapes disagree");
    if (!W_.allFinite() || !b_.allFinite() || !a_.allFinite()) throw ParameterError("stripe net parameters must be finite");
    if (!(alpha_ > 0.0)) throw ParameterError("alpha must be positive");
}

StripeNet StripeNet::initialize(int d, const NetConfig& config, std::uint64_t seed) {
    config.validate();
    RandomStream rng(seed, 0);
    Eigen::MatrixXd W = normal_matrix(config.width, d, config.w_init / std::sqrt(static_cast<double>(d)), rng);
    Eigen::VectorXd b = normal_vector(config.width, config.b_init, rng);
    Eigen::VectorXd a = normal_vector(config.width, config.a_init, rng);
    StripeNet net(std::move(W), std::move(b), std::move(a), config.activation, config.alpha);
    net.freeze_reference();
    return net;
}

void StripeNet::freeze_reference() {
    W0_ = W_;
    b0_ = b_;
    a0_ = a_;
}

void StripeNet::clear_reference() {
    W0_.resize(0, 0);
    b0_.resize(0);
    a0_.resize(0);
}

Eigen::VectorXd StripeNet::raw(const Eigen::MatrixXd& X, const Eigen::MatrixXd& W, const Eigen::VectorXd& b,
                               const Eigen::VectorXd& a) const {
    Eigen::MatrixXd Z = X * W.transpose();
    Z.rowwise() += b.transpose();
    if (act_ == Activation::ReLU) Z = Z.cwiseMax(0.0);
    return Z * a / static_cast<double>(W.rows());
}

Eigen::VectorXd StripeNet::forward(const Eigen::MatrixXd& X) const {
    if (X.cols() != W_.cols()) throw ParameterError("input dimension does not match the net");
    Eigen::VectorXd f = raw(X, W_, b_, a_);
    if (has_reference()) f -= raw(X, W0_, b0_, a0_);
    return alpha_ * f;
}

double StripeNet::forward_one(const Eigen::VectorXd& x) const {
    Eigen::MatrixXd X = x.transpose();
    return forward(X)(0);
}

Eigen::VectorXd StripeNet::parameters() const {
    const Eigen::Index h = W_.rows(), d = W_.cols();
    Eigen::VectorXd theta(h * d + 2 * h);
    for (Eigen::Index m = 0; m < h; ++m) theta.segment(m * d, d) = W_.row(m).transpose();
    theta.segment(h * d, h) = b_;
    theta.segment(h * d + h, h) = a_;
    return theta;
}

void StripeNet::set_parameters(const Eigen::VectorXd& theta) {
    const Eigen::Index h = W_.rows(), d = W_.cols();
    if (theta.size() != h * d + 2 * h) throw ParameterError("parameter vector has the wrong size");
    for (Eigen::Index m = 0; m < h; ++m) W_.row(m) = theta.segment(m * d, d).transpose();
    b_ = theta.segment(h * d, h);
    a_ = theta.segment(h * d + h, h);
}

LossGradient hinge_loss_gradient(const StripeNet& net, const Dataset& data) {
    const Eigen::Index P = data.X.rows(), h = net.width(), d = net.dim();
    if (P == 0 || data.y.size() != P) throw ParameterError("dataset is empty or inconsistent");
    const double alpha = net.alpha();
    const Eigen::VectorXd f = net.forward(data.X);

    // dL/df_p = -y_p / (alpha^2 P) on points with margin below 1.
    Eigen::VectorXd g = Eigen::VectorXd::Zero(P);
    LossGradient out;
    double loss = 0.0;
    for (Eigen::Index p = 0; p < P; ++p) {
        const double slack = 1.0 - data.y(p) * f(p);
        if (slack > 0.0) {
            loss += slack;
            g(p) = -data.y(p);
            ++out.active;
        }
    }
    const double norm = 1.0 / (alpha * alpha * static_cast<double>(P));
    out.loss = loss * norm;
    // df/dg = alpha, dg/da_m = act(z_m)/h, dg/dz_m = a_m act'(z_m)/h.
    g *= norm * alpha / static_cast<double>(h);

    out.gradient = Eigen::VectorXd::Zero(h * d + 2 * h);
    if (out.active == 0) return out;

    Eigen::MatrixXd Z = data.X * net.W().transpose();
    Z.rowwise() += net.b().transpose();
    Eigen::MatrixXd A = net.activation() == Activation::ReLU ? Eigen::MatrixXd(Z.cwiseMax(0.0)) : Z;
    const Eigen::VectorXd ga = A.transpose() * g;
    Eigen::MatrixXd G = g * net.a().transpose();  // P x h
    if (net.activation() == Activation::ReLU) G = G.cwiseProduct((Z.array() > 0.0).cast<double>().matrix());
    const Eigen::MatrixXd gW = G.transpose() * data.X;  // h x d
    const Eigen::VectorXd gb = G.colwise().sum().transpose();

    for (Eigen::Index m = 0; m < h; ++m) out.gradient.segment(m * d, d) = gW.row(m).transpose();
    out.gradient.segment(h * d, h) = gb;
    out.gradient.segment(h * d + h, h) = ga;
    return out;
}

double hinge_loss(const StripeNet& net, const Dataset& data) {
    const Eigen::VectorXd f = net.forward(data.X);
    const double s = (1.0 - data.y.cwiseProduct(f).array()).cwiseMax(0.0).sum();
    return s / (net.alpha() * net.alpha() * static_cast<double>(data.X.rows()));
}

double gradient_check(const StripeNet& net, const Dataset& data, double eps) {
    const Eigen::VectorXd analytic = hinge_loss_gradient(net, data).gradient;
    const Eigen::VectorXd theta = net.parameters();
    Eigen::VectorXd numeric(theta.size());
    StripeNet probe = net;
    for (Eigen::Index k = 0; k < theta.size(); ++k) {
        Eigen::VectorXd t = theta;
        t(k) = theta(k) + eps;
        probe.set_parameters(t);
        const double up = hinge_loss(probe, data);
        t(k) = theta(k) - eps;
        probe.set_parameters(t);
        const double down = hinge_loss(probe, data);
        numeric(k) = (up - down) / (2.0 * eps);
    }
    const double scale = std::max(analytic.norm(), numeric.norm());
    return scale == 0.0 ? 0.0 : (analytic - numeric).norm() / scale;
}

void OptimizerConfig::validate() const {
    if (!(step > 0.0) || !std::isfinite(step)) throw ParameterError("optimizer step must be positive");
    if (max_steps < 0) throw ParameterError("max_steps must be >= 0");
    if (log_every < 1) throw ParameterError("log_every must be >= 1");
}

double alignment(const StripeNet& net) {
    const Eigen::Index d = net.dim();
    if (d < 2) throw ParameterError("alignment needs d >= 2");
    const double parallel = net.W().col(0).squaredNorm();
    const double orthogonal = net.W().rightCols(d - 1).squaredNorm() / static_cast<double>(d - 1);
    if (orthogonal == 0.0) return std::numeric_limits<double>::infinity();
    return std::sqrt(parallel / orthogonal);
}

TrainResult train_stripe_net(const Dataset& data, const NetConfig& config, const OptimizerConfig& opt,
                             std::uint64_t init_seed) {
    opt.validate();
    TrainResult r;
    r.net = StripeNet::initialize(static_cast<int>(data.X.cols()), config, init_seed);
    const double lr = opt.step * config.width;
    int step = 0;
    for (;; ++step) {
        const LossGradient lg = hinge_loss_gradient(r.net, data);
        r.final_loss = lg.loss;
        if (lg.active == 0) {
            r.converged = true;
            r.loss_log.emplace_back(step, lg.loss);
            break;
        }
        if (step % opt.log_every == 0) r.loss_log.emplace_back(step, lg.loss);
        if (step == opt.max_steps) {
            if (r.loss_log.back().first != step) r.loss_log.emplace_back(step, lg.loss);
            break;
        }
        r.net.set_parameters(r.net.parameters() - lr * lg.gradient);
    }
    r.steps = step;
    r.alignment = alignment(r.net);
    return r;
}

TrainResult train_stripe_net(const StripeTask& task, const NetConfig& net, const OptimizerConfig& opt) {
    return train_stripe_net(training_set(task), net, opt, derive_seed(task.seed, seed_domain::init, 0));
}

double stripe_relative_stability(const StripeNet& net, const StripeTask& task, std::size_t n_probe,
                                 double noise_norm, std::uint64_t seed) {
    if (n_probe < 1) throw ParameterError("n_probe must be >= 1");
    if (!(noise_norm > 0.0) || !std::isfinite(noise_norm)) throw ParameterError("noise norm must be positive");
    if (net.dim() != task.d) throw ParameterError("net input dimension does not match the task");
    RandomStream rng(seed, 0);
    const auto count = static_cast<Eigen::Index>(n_probe);
    const Eigen::MatrixXd X = normal_matrix(count, task.d, 1.0, rng);
    const Eigen::MatrixXd nu = sphere_rows(count, task.d, noise_norm, true, rng);
    const Eigen::MatrixXd eta = sphere_rows(count, task.d, noise_norm, false, rng);
    const Eigen::VectorXd f = net.forward(X);
    const double num = (net.forward(X + nu) - f).squaredNorm();
    const double den = (net.forward(X + eta) - f).squaredNorm();
    if (!(den > 0.0)) throw DegenerateError("degenerate predictor: the net does not respond to isotropic noise");
    return num / den;
}

double test_error(const StripeNet& net, const StripeTask& task, std::size_t count, std::uint64_t seed) {
    const Dataset ds = generate_stripe_data(task, count, seed);
    const Eigen::VectorXd f = net.forward(ds.X);
    std::size_t wrong = 0;
    for (Eigen::Index i = 0; i < f.size(); ++i)
        if (!(ds.y(i) * f(i) > 0.0)) ++wrong;
    return static_cast<double>(wrong) / static_cast<double>(count);
}

void ExperimentConfig::validate() const {
    StripeTask{d, boundaries, 2, 0}.validate();
    if (P_values.empty()) throw ParameterError("experiment needs at least one P");
    for (auto P : P_values)
        if (P < 2) throw ParameterError("every P must be >= 2");
    if (seeds < 1) throw ParameterError("experiment needs at least one seed");
    net.validate();
    opt.validate();
    if (n_probe < 1 || n_test < 1) throw ParameterError("probe and test counts must be >= 1");
    if (!(noise_norm > 0.0)) throw ParameterError("noise norm must be positive");
}

std::optional<SlopeFit> fit_line(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw ParameterError("fit_line needs matching x and y");
    const std::size_t m = x.size();
    if (m < 3) return std::nullopt;
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / m;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / m;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0) throw ParameterError("fit_line needs at least two distinct x values");
    SlopeFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    double sse = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double e = y[i] - fit.intercept - fit.slope * x[i];
        sse += e * e;
    }
    fit.r_squared = syy == 0.0 ? 1.0 : 1.0 - sse / syy;
    const double se = std::sqrt(sse / static_cast<double>(m - 2) / sxx);
    const boost::math::students_t dist(static_cast<double>(m - 2));
    const double t = boost::math::quantile(boost::math::complement(dist, 0.025));
    fit.ci_low = fit.slope - t * se;
    fit.ci_high = fit.slope + t * se;
    return fit;
}

std::uint64_t run_seed(std::uint64_t master, std::size_t P, int seed_index) {
    return derive_seed(derive_seed(master, seed_domain::data, P), seed_domain::test, static_cast<std::uint64_t>(seed_index));
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
    config.validate();
    ExperimentResult out;
    const std::size_t nP = config.P_values.size();
    const auto S = static_cast<std::size_t>(config.seeds);
    out.runs.resize(nP * S);

#pragma omp parallel for schedule(dynamic)
    for (std::size_t k = 0; k < nP * S; ++k) {
        const std::size_t P = config.P_values[k / S];
        const int s = static_cast<int>(k % S);
        StripeTask task{config.d, config.boundaries, P, run_seed(config.master_seed, P, s)};
        const TrainResult tr = train_stripe_net(task, config.net, config.opt);
        RunRecord& rec = out.runs[k];
        rec.P = P;
        rec.seed_index = s;
        rec.seed = task.seed;
        rec.r_f = stripe_relative_stability(tr.net, task, config.n_probe, config.noise_norm,
                                            derive_seed(task.seed, seed_domain::probe, 0));
        rec.alignment = tr.alignment;
        rec.test_error = test_error(tr.net, task, config.n_test, derive_seed(task.seed, seed_domain::test, 0));
        rec.steps = tr.steps;
        rec.converged = tr.converged;
    }

    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < nP; ++i) {
        PointSummary ps;
        ps.P = config.P_values[i];
        std::vector<double> logs, aligns;
        double err = 0.0;
        for (std::size_t s = 0; s < S; ++s) {
            const RunRecord& rec = out.runs[i * S + s];
            if (rec.r_f > 0.0) logs.push_back(std::log(rec.r_f));
            aligns.push_back(rec.alignment);
            err += rec.test_error;
            ps.converged += rec.converged ? 1 : 0;
        }
        ps.runs = static_cast<int>(S);
        ps.test_error_mean = err / static_cast<double>(S);
        std::sort(aligns.begin(), aligns.end());
        ps.alignment_median = S % 2 ? aligns[S / 2] : 0.5 * (aligns[S / 2 - 1] + aligns[S / 2]);
        if (!logs.empty()) {
            ps.r_f_logmean = std::exp(std::accumulate(logs.begin(), logs.end(), 0.0) / logs.size());
            lx.push_back(std::log(static_cast<double>(ps.P)));
            ly.push_back(std::log(ps.r_f_logmean));
        }
        out.points.push_back(ps);
    }
    std::vector<double> ux(lx);
    std::sort(ux.begin(), ux.end());
    if (std::unique(ux.begin(), ux.end()) - ux.begin() >= 3) out.fit = fit_line(lx, ly);
    return out;
}

std::string runs_to_csv(const std::vector<RunRecord>& runs) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "P,seed,R_f,alignment,test_error,steps,converged\n";
    for (const auto& r : runs)
        os << r.P << ',' << r.seed_index << ',' << r.r_f << ',' << r.alignment << ',' << r.test_error << ','
           << r.steps << ',' << (r.converged ? 1 : 0) << '\n';
    return os.str();
}

}  // namespace diffeo::stripe
