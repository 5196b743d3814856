#include <cmath>

#include "textpix/autodiff.hpp"

namespace textpix {

double grad_check(const std::function<Var<double>(Tape<double>&, const Var<double>&)>& f,
                  const Tensor<double>& x, double h) {
    if (!(h >= 1e-5 && h <= 1e-2)) {
        throw ContractError("grad_check step must lie in [1e-5, 1e-2]");
    }

    const auto eval = [&f](const Tensor<double>& point) {
        Tape<double> tape;
        auto v = make_var(point, false);
        auto out = f(tape, v);
        if (!out || out->value.size() != 1) {
            throw ContractError("grad_check expects a scalar-valued function");
        }
        const double value = out->value[0];
        if (!std::isfinite(value)) {
            throw NumericError("grad_check function returned a non-finite value");
        }
        return value;
    };

    Tape<double> tape;
    auto var = make_var(x, true);
    auto loss = f(tape, var);
    if (!loss || loss->value.size() != 1) {
        throw ContractError("grad_check expects a scalar-valued function");
    }
    if (!std::isfinite(loss->value[0])) {
        throw NumericError("grad_check function returned a non-finite value");
    }
    tape.backward(loss);
    var->ensure_grad();
    const Tensor<double>& analytic = var->grad;

    double max_err = 0.0;
    Tensor<double> probe = x;
    for (std::int64_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + h;
        const double fp = eval(probe);
        probe[i] = orig - h;
        const double fm = eval(probe);
        probe[i] = orig;

        const double fd = (fp - fm) / (2.0 * h);
        const double err = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(analytic[i]));
        max_err = std::max(max_err, err);
    }
    return max_err;
}

}  // namespace textpix
