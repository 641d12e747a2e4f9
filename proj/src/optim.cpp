#include "fcgl/optim.hpp"

#include <cmath>
#include <deque>
#include <stdexcept>

namespace fcgl {

AdamState AdamState::for_params(const std::vector<Tensor>& params) {
    AdamState s;
    for (const Tensor& p : params) {
        s.first_moment.emplace_back(Tensor(p.shape()));
        s.second_moment.emplace_back(Tensor(p.shape()));
    }
    return s;
}

void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& state, double lr,
               double weight_decay) {
    if (params.size() != grads.size() || params.size() != state.first_moment.size())
        throw std::invalid_argument("adam_step: parameter/gradient/state counts disagree");
    if (lr <= 0.0) throw std::invalid_argument("adam_step: learning rate must be positive");
    if (weight_decay < 0.0) throw std::invalid_argument("adam_step: weight decay must be nonnegative");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i];
        const Tensor& g = grads[i];
        if (!p.same_shape(g) || !p.same_shape(state.first_moment[i]))
            throw std::invalid_argument("adam_step: shape mismatch at parameter " + std::to_string(i));
        Tensor& m = state.first_moment[i];
        Tensor& v = state.second_moment[i];
        for (int64_t k = 0; k < p.size(); ++k) {
            const double gk = g[k] + weight_decay * p[k];
            m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * gk;
            v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * gk * gk;
            p[k] -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + state.epsilon);
        }
    }
}

namespace {

double dot(const Tensor& a, const Tensor& b) {
    double acc = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

}  // namespace

double lbfgs_minimize(const std::function<double(const Tensor&, Tensor&)>& value_and_grad, Tensor& x,
                      int max_iterations, double initial_step, int history) {
    Tensor grad(x.shape());
    double fx = value_and_grad(x, grad);
    Tensor best_x = x;
    double best_f = fx;

    std::deque<Tensor> s_hist, y_hist;
    std::deque<double> rho_hist;

    for (int iter = 0; iter < max_iterations; ++iter) {
        // Two-loop recursion for the search direction.
        Tensor q = grad;
        std::vector<double> alpha(s_hist.size());
        for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
            alpha[static_cast<size_t>(i)] = rho_hist[static_cast<size_t>(i)] * dot(s_hist[static_cast<size_t>(i)], q);
            for (int64_t k = 0; k < q.size(); ++k)
                q[k] -= alpha[static_cast<size_t>(i)] * y_hist[static_cast<size_t>(i)][k];
        }
        if (!s_hist.empty()) {
            const Tensor& s = s_hist.back();
            const Tensor& y = y_hist.back();
            const double gamma = dot(s, y) / std::max(dot(y, y), 1e-300);
            scale_in_place(q, gamma);
        }
        for (size_t i = 0; i < s_hist.size(); ++i) {
            const double beta = rho_hist[i] * dot(y_hist[i], q);
            for (int64_t k = 0; k < q.size(); ++k) q[k] += (alpha[i] - beta) * s_hist[i][k];
        }
        // q is the ascent-scaled gradient estimate; descend along -q.
        const double gq = dot(grad, q);
        if (gq <= 0.0 || !std::isfinite(gq)) {
            q = grad;  // fall back to steepest descent
        }
        double step = s_hist.empty() ? initial_step : 1.0;
        Tensor x_new(x.shape());
        Tensor grad_new(x.shape());
        double f_new = fx;
        bool accepted = false;
        const double slope = dot(grad, q);
        for (int ls = 0; ls < 25; ++ls) {
            for (int64_t k = 0; k < x.size(); ++k) x_new[k] = x[k] - step * q[k];
            f_new = value_and_grad(x_new, grad_new);
            if (std::isfinite(f_new) && f_new <= fx - 1e-4 * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;

        Tensor s_vec(x.shape()), y_vec(x.shape());
        for (int64_t k = 0; k < x.size(); ++k) {
            s_vec[k] = x_new[k] - x[k];
            y_vec[k] = grad_new[k] - grad[k];
        }
        const double sy = dot(s_vec, y_vec);
        if (sy > 1e-12) {
            s_hist.push_back(std::move(s_vec));
            y_hist.push_back(std::move(y_vec));
            rho_hist.push_back(1.0 / sy);
            if (static_cast<int>(s_hist.size()) > history) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
        }
        x = std::move(x_new);
        grad = std::move(grad_new);
        fx = f_new;
        if (fx < best_f) {
            best_f = fx;
            best_x = x;
        }
        double gnorm = std::sqrt(dot(grad, grad));
        if (gnorm < 1e-12) break;
    }
    x = best_x;
    return best_f;
}

}  // namespace fcgl
