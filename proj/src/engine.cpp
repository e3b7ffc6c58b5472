#include "landsar/engine.hpp"

#include "landsar/errors.hpp"
#include "fnv.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <limits>
#include <random>
#include <stdexcept>

namespace landsar {

// ---------------------------------------------------------------------------
// Grid

MpmGrid::MpmGrid(const Eigen::Vector3d& origin, double spacing, const Eigen::Vector3i& dims)
    : origin_(origin), spacing_(spacing), dims_(dims) {
    if (!(spacing > 0)) throw std::invalid_argument("grid spacing must be positive");
    if ((dims.array() < 4).any()) throw std::invalid_argument("grid needs at least 4 cells per axis");
    stride_y_ = static_cast<std::size_t>(dims.y() + 1);
    stride_z_ = static_cast<std::size_t>(dims.z() + 1);
    const std::size_t n = static_cast<std::size_t>(dims.x() + 1) * stride_y_ * stride_z_;
    nodes_.assign(n, Node{Eigen::Vector3d::Zero(), 0.0});
    static_.assign(n, StaticCollider{std::numeric_limits<float>::infinity(), 0.f, 0.f, 1.f});
}

double MpmGrid::total_mass() const {
    double m = 0.0;
    for (const auto& n : nodes_) m += n.mass;
    return m;
}

void MpmGrid::clear() {
    if ((active_hi_.array() < active_lo_.array()).any()) return;
    const std::size_t len = static_cast<std::size_t>(active_hi_.z() - active_lo_.z() + 1);
    for (int i = active_lo_.x(); i <= active_hi_.x(); ++i)
        for (int j = active_lo_.y(); j <= active_hi_.y(); ++j)
            std::memset(static_cast<void*>(&nodes_[index(i, j, active_lo_.z())]), 0, len * sizeof(Node));
    active_hi_ = Eigen::Vector3i::Constant(-1);
    active_lo_ = Eigen::Vector3i::Zero();
}

void MpmGrid::set_active(const Eigen::Vector3i& lo, const Eigen::Vector3i& hi) {
    active_lo_ = lo.cwiseMax(0);
    active_hi_ = hi.cwiseMin(dims_);
}

namespace {

void bake_static_colliders(MpmGrid& grid, const ColliderSet& colliders) {
    auto& cache = grid.static_colliders();
    const auto& d = grid.dims();
    for (int i = 0; i <= d.x(); ++i)
        for (int j = 0; j <= d.y(); ++j)
            for (int k = 0; k <= d.z(); ++k) {
                const Eigen::Vector3d p = grid.node_position(i, j, k);
                ColliderHit best{std::numeric_limits<double>::infinity(), Eigen::Vector3d::UnitZ()};
                if (colliders.terrain_enabled()) best = colliders.terrain_query(p);
                for (const auto& box : colliders.building_boxes()) {
                    const auto hit = box.query(p);
                    if (hit.distance < best.distance) best = hit;
                }
                cache[grid.index(i, j, k)] = {static_cast<float>(best.distance), static_cast<float>(best.normal.x()),
                                              static_cast<float>(best.normal.y()),
                                              static_cast<float>(best.normal.z())};
            }
}

// Deterministic across standard libraries, unlike std::uniform_real_distribution.
double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// Quadratic B-spline stencil of a point.
struct Stencil {
    Eigen::Vector3i base;
    Eigen::Vector3d fx;  // position relative to base, in cells
    std::array<Eigen::Vector3d, 3> w;
};

inline Stencil make_stencil(const Eigen::Vector3d& x, const Eigen::Vector3d& origin, double inv_dx) {
    Stencil s;
    const Eigen::Vector3d g = (x - origin) * inv_dx;
    for (int a = 0; a < 3; ++a) s.base[a] = static_cast<int>(std::floor(g[a] - 0.5));
    s.fx = g - s.base.cast<double>();
    s.w[0] = 0.5 * (1.5 - s.fx.array()).square();
    s.w[1] = 0.75 - (s.fx.array() - 1.0).square();
    s.w[2] = 0.5 * (s.fx.array() - 0.5).square();
    return s;
}

// Remove the inward normal component and apply Coulomb friction.
inline void project_velocity(Eigen::Vector3d& v, const Eigen::Vector3d& n, double mu) {
    const double vn = v.dot(n);
    if (vn >= 0) return;
    Eigen::Vector3d vt = v - vn * n;
    const double vt_len = vt.norm();
    if (vt_len <= -mu * vn) {
        v.setZero();
    } else {
        v = vt * (1.0 + mu * vn / vt_len);
    }
}

struct BoulderCoupling {
    Eigen::Vector3d drag_impulse = Eigen::Vector3d::Zero();
    double submerged = 0.0;
};

}  // namespace

// ---------------------------------------------------------------------------
// State

double SimulationState::total_fluid_mass() const {
    double m = 0.0;
    for (const auto& p : particles) m += p.mass;
    return m;
}

double SimulationState::total_fluid_volume() const {
    double v = 0.0;
    for (const auto& p : particles) v += p.volume;
    return v;
}

Eigen::Vector3d SimulationState::total_momentum() const {
    Eigen::Vector3d m = Eigen::Vector3d::Zero();
    for (const auto& p : particles) m += p.mass * p.v;
    for (const auto& b : boulders) m += b.mass * b.velocity;
    return m;
}

void SimulationState::add_barrier(const Barrier& b) {
    colliders.add_barrier(b);
    contact_logs[b.id] = BarrierContactLog{};
}

void SimulationState::update_barrier(const Barrier& b) { colliders.update_barrier(b); }

void SimulationState::remove_barrier(const std::string& id) {
    colliders.remove_barrier(id);
    contact_logs.erase(id);
}

SimulationState make_state(std::shared_ptr<const TerrainGrid> terrain, std::vector<Building> buildings,
                           const EngineParams& params, std::uint64_t seed, std::optional<GridOverride> grid) {
    if (!terrain) throw std::invalid_argument("make_state needs a terrain");
    if (!(params.dt > 0)) throw std::invalid_argument("dt must be positive");
    if (!(params.rho > 0)) throw std::invalid_argument("rho must be positive");
    if (params.particles_per_cell < 1) throw std::invalid_argument("particles_per_cell must be >= 1");

    SimulationState s;
    s.seed = seed;
    s.params = params;
    s.colliders = ColliderSet(terrain, std::move(buildings));
    if (grid) {
        s.grid = MpmGrid(grid->origin, grid->spacing, grid->dims);
    } else {
        const auto& ts = terrain->spec();
        const double dx = params.grid_spacing > 0 ? params.grid_spacing : ts.cell_size;
        const double h_min = terrain->min_height(), h_max = terrain->max_height();
        const Eigen::Vector3i dims(static_cast<int>(std::ceil(ts.extent_x() / dx - 1e-9)),
                                   static_cast<int>(std::ceil(ts.extent_y() / dx - 1e-9)),
                                   static_cast<int>(std::ceil((h_max - h_min) / dx)) + 2 + params.headroom_cells);
        s.grid = MpmGrid(Eigen::Vector3d(ts.origin_x, ts.origin_y, h_min - 2.0 * dx), dx, dims.cwiseMax(4));
    }
    bake_static_colliders(s.grid, s.colliders);
    return s;
}

void set_terrain_collision(SimulationState& state, bool enabled) {
    state.colliders.set_terrain_enabled(enabled);
    bake_static_colliders(state.grid, state.colliders);
}

// ---------------------------------------------------------------------------
// Release

double polygon_area(const Polygon& poly) {
    if (poly.size() < 3) return 0.0;
    double a = 0.0;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++)
        a += poly[j].x() * poly[i].y() - poly[i].x() * poly[j].y();
    return std::abs(0.5 * a);
}

bool point_in_polygon(const Polygon& poly, const Eigen::Vector2d& p) {
    bool inside = false;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const auto& a = poly[i];
        const auto& b = poly[j];
        if ((a.y() > p.y()) != (b.y() > p.y()) &&
            p.x() < (b.x() - a.x()) * (p.y() - a.y()) / (b.y() - a.y()) + a.x())
            inside = !inside;
    }
    return inside;
}

void init_release(SimulationState& state, const Polygon& region, double volume) {
    if (!(volume > 0)) throw std::invalid_argument("release volume must be positive");
    if (polygon_area(region) <= 0) throw std::invalid_argument("release region has zero area");
    const TerrainGrid* terrain = state.colliders.terrain();
    if (!terrain) throw std::invalid_argument("state has no terrain");
    for (const auto& v : region)
        if (!terrain->spec().contains(v.x(), v.y()))
            throw std::invalid_argument(fmt::format("release vertex ({}, {}) is outside the terrain", v.x(), v.y()));

    std::mt19937_64 rng(state.seed);
    const double dx = state.grid.spacing();
    const double s = dx / std::cbrt(static_cast<double>(state.params.particles_per_cell));

    Eigen::Vector2d lo = region.front(), hi = region.front();
    for (const auto& v : region) {
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
    }
    std::vector<Eigen::Vector2d> columns;
    const auto nx = static_cast<long>(std::ceil((hi.x() - lo.x()) / s));
    const auto ny = static_cast<long>(std::ceil((hi.y() - lo.y()) / s));
    for (long j = 0; j < ny; ++j)
        for (long i = 0; i < nx; ++i) {
            const Eigen::Vector2d c = lo + s * Eigen::Vector2d(i + 0.5, j + 0.5);
            if (!point_in_polygon(region, c)) continue;
            const Eigen::Vector2d jitter(uniform01(rng) - 0.5, uniform01(rng) - 0.5);
            columns.push_back(c + 0.5 * s * jitter);
        }
    if (columns.empty()) {
        Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
        for (const auto& v : region) centroid += v;
        columns.push_back(centroid / static_cast<double>(region.size()));
    }

    const double depth = volume / (static_cast<double>(columns.size()) * s * s);
    const auto layers = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(depth / s)));
    const double layer = depth / static_cast<double>(layers);
    const double particle_volume = volume / static_cast<double>(columns.size() * layers);
    const Eigen::Vector3d grid_lo = state.grid.origin().array() + dx;
    const Eigen::Vector3d grid_hi = state.grid.origin() + dx * (state.grid.dims().cast<double>().array() - 1.0).matrix();
    for (const auto& c : columns) {
        const double ground = sample_surface(*terrain, c.x(), c.y()).height;
        for (std::size_t k = 0; k < layers; ++k) {
            FluidParticle p;
            p.x = Eigen::Vector3d(c.x(), c.y(), ground + (static_cast<double>(k) + 0.5) * layer);
            p.x = p.x.cwiseMax(grid_lo).cwiseMin(grid_hi);
            p.volume = particle_volume;
            p.mass = state.params.rho * particle_volume;
            state.particles.push_back(p);
        }
    }

    const auto& bp = state.params.boulders;
    for (std::size_t n = 0; n < bp.count; ++n) {
        Eigen::Vector2d c = columns[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(columns.size()))];
        for (int attempt = 0; attempt < 64; ++attempt) {
            const Eigen::Vector2d q(lo.x() + uniform01(rng) * (hi.x() - lo.x()),
                                    lo.y() + uniform01(rng) * (hi.y() - lo.y()));
            if (point_in_polygon(region, q)) {
                c = q;
                break;
            }
        }
        Boulder b;
        b.radius = bp.radius_min + uniform01(rng) * (bp.radius_max - bp.radius_min);
        const auto surf = sample_surface(*terrain, c.x(), c.y());
        const double nz = 1.0 / std::sqrt(1.0 + surf.dhdx * surf.dhdx + surf.dhdy * surf.dhdy);
        b.center = Eigen::Vector3d(c.x(), c.y(), surf.height + b.radius / nz + 0.01);
        b.mass = bp.density * 4.0 / 3.0 * M_PI * b.radius * b.radius * b.radius;
        state.boulders.push_back(b);
    }
    state.previous_positions.clear();
}

// ---------------------------------------------------------------------------
// Step

namespace {

void check_inputs(const SimulationState& s) {
    double vmax = 0.0;
    for (std::size_t i = 0; i < s.particles.size(); ++i) {
        const auto& p = s.particles[i];
        if (!p.x.allFinite() || !p.v.allFinite() || !p.C.allFinite() || !std::isfinite(p.J))
            throw StepError(fmt::format("particle {} has a non-finite state", i));
        vmax = std::max(vmax, p.v.norm());
    }
    for (std::size_t i = 0; i < s.boulders.size(); ++i) {
        const auto& b = s.boulders[i];
        if (!b.center.allFinite() || !b.velocity.allFinite())
            throw StepError(fmt::format("boulder {} has a non-finite state", i));
        vmax = std::max(vmax, b.velocity.norm());
    }
    const double limit = s.params.cfl * s.grid.spacing();
    if (vmax * s.params.dt > limit)
        throw StepError(fmt::format("CFL violated: max speed {:.4g} m/s * dt {:.4g} s exceeds {:.4g} m", vmax,
                                    s.params.dt, limit));
}

// Node-index box covering every particle and boulder stencil.
std::pair<Eigen::Vector3i, Eigen::Vector3i> active_node_box(const SimulationState& s) {
    Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
    Eigen::Vector3d hi = -lo;
    for (const auto& p : s.particles) {
        lo = lo.cwiseMin(p.x);
        hi = hi.cwiseMax(p.x);
    }
    for (const auto& b : s.boulders) {
        lo = lo.cwiseMin(b.center);
        hi = hi.cwiseMax(b.center);
    }
    const double inv_dx = 1.0 / s.grid.spacing();
    const Eigen::Vector3d glo = (lo - s.grid.origin()) * inv_dx, ghi = (hi - s.grid.origin()) * inv_dx;
    return {(glo.array() - 0.5).floor().cast<int>().matrix(),
            (ghi.array() - 0.5).floor().cast<int>().matrix() + Eigen::Vector3i::Constant(2)};
}

void particle_to_grid(SimulationState& s) {
    auto& grid = s.grid;
    auto& nodes = grid.nodes();
    const double dx = grid.spacing(), inv_dx = 1.0 / dx, dt = s.params.dt;
    const double stress_scale = 4.0 * inv_dx * inv_dx * dt;
    const double k = s.params.eos_stiffness, gamma = s.params.eos_gamma;
    const Eigen::Vector3d origin = grid.origin();

    for (const auto& p : s.particles) {
        const Stencil st = make_stencil(p.x, origin, inv_dx);
        const double pressure = std::max(0.0, k * (std::pow(1.0 / p.J, gamma) - 1.0));
        // Fluid Kirchhoff stress is -J p I; its MLS force enters as an isotropic affine term.
        const double iso = stress_scale * p.volume * p.J * pressure;
        double A[3][3];
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) A[r][c] = p.mass * p.C(r, c) + (r == c ? iso : 0.0);
        const double mv[3] = {p.mass * p.v.x(), p.mass * p.v.y(), p.mass * p.v.z()};
        for (int a = 0; a < 3; ++a) {
            const double wa = st.w[a].x();
            const double dxa = (a - st.fx.x()) * dx;
            for (int b = 0; b < 3; ++b) {
                const double wab = wa * st.w[b].y();
                const double dyb = (b - st.fx.y()) * dx;
                // Momentum contribution is linear in the z offset along the stencil column.
                double base_mom[3];
                for (int r = 0; r < 3; ++r) base_mom[r] = mv[r] + A[r][0] * dxa + A[r][1] * dyb;
                MpmGrid::Node* row = &nodes[grid.index(st.base.x() + a, st.base.y() + b, st.base.z())];
                for (int c = 0; c < 3; ++c) {
                    const double w = wab * st.w[c].z();
                    const double dzc = (c - st.fx.z()) * dx;
                    double* m = row[c].momentum.data();
                    for (int r = 0; r < 3; ++r) m[r] += w * (base_mom[r] + A[r][2] * dzc);
                    row[c].mass += w * p.mass;
                }
            }
        }
    }
}

std::vector<BoulderCoupling> couple_boulders(SimulationState& s) {
    std::vector<BoulderCoupling> out(s.boulders.size());
    auto& grid = s.grid;
    auto& nodes = grid.nodes();
    const double dx = grid.spacing(), inv_dx = 1.0 / dx, dt = s.params.dt;
    const Eigen::Vector3i& dims = grid.dims();
    for (std::size_t bi = 0; bi < s.boulders.size(); ++bi) {
        const auto& b = s.boulders[bi];
        const Stencil st = make_stencil(b.center, grid.origin(), inv_dx);
        if ((st.base.array() < 0).any() || (st.base.array() + 2 > dims.array()).any()) continue;
        double w_sum = 0.0, m_local = 0.0;
        Eigen::Vector3d u = Eigen::Vector3d::Zero();
        for (int a = 0; a < 3; ++a)
            for (int c = 0; c < 3; ++c)
                for (int e = 0; e < 3; ++e) {
                    const auto& n = nodes[grid.index(st.base.x() + a, st.base.y() + c, st.base.z() + e)];
                    if (n.mass <= 0) continue;
                    const double w = st.w[a].x() * st.w[c].y() * st.w[e].z();
                    w_sum += w;
                    m_local += w * n.mass;
                    u += w * n.momentum;  // velocity at this point of the update
                }
        if (w_sum <= 0) continue;
        u /= w_sum;
        const double frac = std::clamp(m_local / (dx * dx * dx * s.params.rho), 0.0, 1.0);
        const double density = b.mass / (4.0 / 3.0 * M_PI * b.radius * b.radius * b.radius);
        const double rate = s.params.drag_coefficient * frac * s.params.rho / density;
        // Implicit drag so large rates stay stable.
        const Eigen::Vector3d v_new = (b.velocity + rate * dt * u) / (1.0 + rate * dt);
        const Eigen::Vector3d impulse = b.mass * (v_new - b.velocity);
        out[bi] = {impulse, frac};
        // Equal and opposite momentum sink on the fluid.
        for (int a = 0; a < 3; ++a)
            for (int c = 0; c < 3; ++c)
                for (int e = 0; e < 3; ++e) {
                    auto& n = nodes[grid.index(st.base.x() + a, st.base.y() + c, st.base.z() + e)];
                    if (n.mass <= 0) continue;
                    const double w = st.w[a].x() * st.w[c].y() * st.w[e].z() / w_sum;
                    n.momentum -= impulse * (w / n.mass);
                }
    }
    return out;
}

void update_grid(SimulationState& s, std::vector<BoulderCoupling>& coupling) {
    auto& grid = s.grid;
    auto& nodes = grid.nodes();
    const auto& cache = grid.static_colliders();
    const double dt = s.params.dt, mu = s.params.mu_t;
    const Eigen::Vector3d dv_gravity = dt * s.params.gravity;
    const Eigen::Vector3i& d = grid.dims();
    const auto& barriers = s.colliders.barrier_boxes();

    const Eigen::Vector3i lo = grid.active_lo(), hi = grid.active_hi();
    for (int i = lo.x(); i <= hi.x(); ++i)
        for (int j = lo.y(); j <= hi.y(); ++j)
            for (int k = lo.z(); k <= hi.z(); ++k) {
                auto& n = nodes[grid.index(i, j, k)];
                if (n.mass <= 0) continue;
                n.momentum = n.momentum / n.mass + dv_gravity;
            }

    coupling = couple_boulders(s);

    for (int i = lo.x(); i <= hi.x(); ++i)
        for (int j = lo.y(); j <= hi.y(); ++j)
            for (int k = lo.z(); k <= hi.z(); ++k) {
                const std::size_t idx = grid.index(i, j, k);
                auto& n = nodes[idx];
                if (n.mass <= 0) continue;
                Eigen::Vector3d& v = n.momentum;
                const auto& sc = cache[idx];
                if (sc.distance < 0) project_velocity(v, Eigen::Vector3d(sc.nx, sc.ny, sc.nz), mu);
                if (!barriers.empty()) {
                    const Eigen::Vector3d pos = grid.node_position(i, j, k);
                    for (const auto& box : barriers) {
                        if (!box.near(pos, 0.0)) continue;
                        const auto hit = box.query(pos);
                        if (hit.distance < 0) project_velocity(v, hit.normal, mu);
                    }
                }
                if (i < 2) v.x() = std::max(v.x(), 0.0);
                if (i > d.x() - 2) v.x() = std::min(v.x(), 0.0);
                if (j < 2) v.y() = std::max(v.y(), 0.0);
                if (j > d.y() - 2) v.y() = std::min(v.y(), 0.0);
                if (k < 2) v.z() = std::max(v.z(), 0.0);
                if (k > d.z() - 2) v.z() = std::min(v.z(), 0.0);
            }
}

void grid_to_particle(SimulationState& s) {
    auto& grid = s.grid;
    const auto& nodes = grid.nodes();
    const double dx = grid.spacing(), inv_dx = 1.0 / dx, dt = s.params.dt;
    const Eigen::Vector3d origin = grid.origin();
    const double c_scale = 4.0 * inv_dx * inv_dx;
    for (auto& p : s.particles) {
        const Stencil st = make_stencil(p.x, origin, inv_dx);
        double v[3] = {0, 0, 0};
        double B[3][3] = {};
        for (int a = 0; a < 3; ++a) {
            const double wa = st.w[a].x();
            const double dxa = (a - st.fx.x()) * dx;
            for (int b = 0; b < 3; ++b) {
                const double wab = wa * st.w[b].y();
                const double dyb = (b - st.fx.y()) * dx;
                const MpmGrid::Node* row = &nodes[grid.index(st.base.x() + a, st.base.y() + b, st.base.z())];
                // Sum over the z stencil first; x and y offsets are constant along it.
                double sv[3] = {0, 0, 0}, sz[3] = {0, 0, 0};
                for (int c = 0; c < 3; ++c) {
                    const double w = wab * st.w[c].z();
                    const double dzc = (c - st.fx.z()) * dx;
                    const double* gv = row[c].momentum.data();
                    for (int r = 0; r < 3; ++r) {
                        const double wv = w * gv[r];
                        sv[r] += wv;
                        sz[r] += wv * dzc;
                    }
                }
                for (int r = 0; r < 3; ++r) {
                    v[r] += sv[r];
                    B[r][0] += sv[r] * dxa;
                    B[r][1] += sv[r] * dyb;
                    B[r][2] += sz[r];
                }
            }
        }
        p.v = Eigen::Vector3d(v[0], v[1], v[2]);
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) p.C(r, c) = c_scale * B[r][c];
        p.J = std::clamp(p.J * (1.0 + dt * p.C.trace()), 0.1, 10.0);
        p.x += dt * p.v;
    }
}

struct DomainBounds {
    Eigen::Vector3d lo, hi;
};

DomainBounds domain_bounds(const MpmGrid& grid) {
    const double dx = grid.spacing();
    return {grid.origin().array() + dx,
            grid.origin() + dx * (grid.dims().cast<double>().array() - 1.0).matrix()};
}

void enforce_colliders(const ColliderSet& colliders, const DomainBounds& dom, Eigen::Vector3d& x,
                       Eigen::Vector3d& v) {
    auto push_terrain = [&] {
        if (!colliders.terrain_enabled()) return;
        const auto surf = sample_surface(*colliders.terrain(), x.x(), x.y());
        if (x.z() >= surf.height) return;
        x.z() = surf.height;
        const Eigen::Vector3d n = Eigen::Vector3d(-surf.dhdx, -surf.dhdy, 1.0).normalized();
        const double vn = v.dot(n);
        if (vn < 0) v -= vn * n;
    };
    for (int pass = 0; pass < 2; ++pass) {
        push_terrain();
        auto push_out = [&](const OrientedBox& box) {
            if (!box.near(x, 0.0)) return;
            const auto hit = box.query(x);
            if (hit.distance >= 0) return;
            x -= hit.distance * hit.normal;
            const double vn = v.dot(hit.normal);
            if (vn < 0) v -= vn * hit.normal;
        };
        for (const auto& box : colliders.building_boxes()) push_out(box);
        for (const auto& box : colliders.barrier_boxes()) push_out(box);
    }
    push_terrain();
    for (int a = 0; a < 3; ++a) {
        if (x[a] < dom.lo[a]) {
            x[a] = dom.lo[a];
            v[a] = std::max(v[a], 0.0);
        } else if (x[a] > dom.hi[a]) {
            x[a] = dom.hi[a];
            v[a] = std::min(v[a], 0.0);
        }
    }
}

void integrate_boulders(SimulationState& s, const std::vector<BoulderCoupling>& coupling) {
    if (s.boulders.empty()) return;
    const double dt = s.params.dt, mu = s.params.mu_t;
    const double tol = s.penetration_tol();
    const auto& colliders = s.colliders;
    const DomainBounds dom = domain_bounds(s.grid);
    constexpr double kappa = 0.1;  // k dt^2 / m, well inside the explicit stability bound of 4
    constexpr double zeta = 0.7;

    std::vector<Eigen::Vector3d> forces(s.boulders.size(), Eigen::Vector3d::Zero());
    auto contact = [&](std::size_t i, const ColliderHit& hit, const Eigen::Vector3d& rel_v, double mass) {
        const auto& b = s.boulders[i];
        const double pen = b.radius - hit.distance;
        if (pen <= 0) return;
        const double stiffness = mass * kappa / (dt * dt);
        const double damping = 2.0 * zeta * std::sqrt(stiffness * mass);
        const double vn = rel_v.dot(hit.normal);
        const double fn = std::max(0.0, stiffness * pen - damping * vn);
        Eigen::Vector3d f = fn * hit.normal;
        const Eigen::Vector3d vt = rel_v - vn * hit.normal;
        const double vt_len = vt.norm();
        if (vt_len > 1e-12) f -= std::min(mu * fn, mass * vt_len / dt) * vt / vt_len;
        forces[i] += f;
    };

    for (std::size_t i = 0; i < s.boulders.size(); ++i) {
        const auto& b = s.boulders[i];
        const double volume = 4.0 / 3.0 * M_PI * b.radius * b.radius * b.radius;
        forces[i] += b.mass * s.params.gravity - coupling[i].submerged * s.params.rho * volume * s.params.gravity;
        if (colliders.terrain_enabled()) contact(i, colliders.terrain_query(b.center), b.velocity, b.mass);
        for (const auto& box : colliders.building_boxes())
            if (box.near(b.center, b.radius)) contact(i, box.query(b.center), b.velocity, b.mass);
        for (const auto& box : colliders.barrier_boxes())
            if (box.near(b.center, b.radius)) contact(i, box.query(b.center), b.velocity, b.mass);
        for (std::size_t j = i + 1; j < s.boulders.size(); ++j) {
            const auto& o = s.boulders[j];
            const Eigen::Vector3d d = b.center - o.center;
            const double dist = d.norm();
            const double pen = b.radius + o.radius - dist;
            if (pen <= 0 || dist < 1e-12) continue;
            const Eigen::Vector3d n = d / dist;
            const double m_eff = b.mass * o.mass / (b.mass + o.mass);
            const double stiffness = m_eff * kappa / (dt * dt);
            const double damping = 2.0 * zeta * std::sqrt(stiffness * m_eff);
            const double fn = std::max(0.0, stiffness * pen - damping * (b.velocity - o.velocity).dot(n));
            forces[i] += fn * n;
            forces[j] -= fn * n;
        }
    }

    for (std::size_t i = 0; i < s.boulders.size(); ++i) {
        auto& b = s.boulders[i];
        b.velocity += coupling[i].drag_impulse / b.mass + dt * forces[i] / b.mass;
        b.center += dt * b.velocity;
        // Hard cap so the penalty never lets a boulder sink past half the tolerance.
        for (int pass = 0; pass < 2; ++pass) {
            auto cap = [&](const ColliderHit& hit) {
                const double gap = hit.distance - b.radius;
                if (gap >= -0.5 * tol) return;
                b.center += (-0.5 * tol - gap) * hit.normal;
                const double vn = b.velocity.dot(hit.normal);
                if (vn < 0) b.velocity -= vn * hit.normal;
            };
            if (colliders.terrain_enabled()) {
                // The terrain distance is only first-order exact, so iterate it.
                for (int it = 0; it < 3; ++it) cap(colliders.terrain_query(b.center));
            }
            for (const auto& box : colliders.building_boxes())
                if (box.near(b.center, b.radius)) cap(box.query(b.center));
            for (const auto& box : colliders.barrier_boxes())
                if (box.near(b.center, b.radius)) cap(box.query(b.center));
        }
        for (int a = 0; a < 3; ++a) {
            const double lo = dom.lo[a] + b.radius, hi = dom.hi[a] - b.radius;
            if (b.center[a] < lo) {
                b.center[a] = lo;
                b.velocity[a] = std::max(b.velocity[a], 0.0);
            } else if (b.center[a] > hi) {
                b.center[a] = hi;
                b.velocity[a] = std::min(b.velocity[a], 0.0);
            }
        }
    }
}

}  // namespace

void step(SimulationState& s) {
    check_inputs(s);
    const bool empty = s.particles.empty() && s.boulders.empty();
    if (!empty) {
        s.previous_positions.resize(s.particles.size());
        for (std::size_t i = 0; i < s.particles.size(); ++i) s.previous_positions[i] = s.particles[i].x;

        s.grid.clear();
        const auto [lo, hi] = active_node_box(s);
        s.grid.set_active(lo, hi);
        particle_to_grid(s);
        std::vector<BoulderCoupling> coupling;
        update_grid(s, coupling);
        grid_to_particle(s);

        const DomainBounds dom = domain_bounds(s.grid);
        for (auto& p : s.particles) enforce_colliders(s.colliders, dom, p.x, p.v);
        integrate_boulders(s, coupling);
    }
    ++s.step;
    s.time = static_cast<double>(s.step) * s.params.dt;
    if (!empty)
        for (const auto& b : s.colliders.barriers()) record_barrier_contact(s, b.id);
}

// ---------------------------------------------------------------------------
// Fields

Raster depth_field(const SimulationState& s) {
    const auto& spec = s.colliders.terrain()->spec();
    Raster out(spec, 0.0);
    const double inv_area = 1.0 / (spec.cell_size * spec.cell_size);
    for (const auto& p : s.particles)
        out.at(spec.nearest_col(p.x.x()), spec.nearest_row(p.x.y())) += p.volume * inv_area;
    return out;
}

Raster velocity_field(const SimulationState& s) {
    const auto& spec = s.colliders.terrain()->spec();
    Raster out(spec, 0.0);
    std::vector<double> weight(spec.size(), 0.0);
    for (const auto& p : s.particles) {
        const std::size_t i = spec.index(spec.nearest_col(p.x.x()), spec.nearest_row(p.x.y()));
        out.values[i] += p.volume * std::hypot(p.v.x(), p.v.y());
        weight[i] += p.volume;
    }
    for (std::size_t i = 0; i < weight.size(); ++i)
        if (weight[i] > 0) out.values[i] /= weight[i];
    return out;
}

// ---------------------------------------------------------------------------
// Barrier contact

const BarrierContactLog& record_barrier_contact(SimulationState& s, const std::string& barrier_id) {
    const Barrier* barrier = s.colliders.find_barrier(barrier_id);
    auto log_it = s.contact_logs.find(barrier_id);
    if (!barrier || log_it == s.contact_logs.end()) throw UnknownBarrier(barrier_id);
    BarrierContactLog& log = log_it->second;

    const Eigen::Vector3d n = barrier->face_normal();
    const Eigen::Vector3d t = barrier->width_axis();
    const Eigen::Vector3d c = barrier->center;
    const double face = 0.5 * barrier->thickness;
    const double band = 2.0 * s.grid.spacing();
    const double half_w = 0.5 * barrier->width;
    const auto bins = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(barrier->width / s.grid.spacing())));
    const double bin_w = barrier->width / static_cast<double>(bins);

    std::vector<double> bin_volume(bins, 0.0);
    double zone_volume = 0.0, approach = 0.0, flux = 0.0;
    for (const auto& p : s.particles) {
        const Eigen::Vector3d r = p.x - c;
        const double a = r.dot(n), b = r.dot(t);
        if (a < face || a > face + band || std::abs(b) > half_w) continue;
        const double speed_in = std::max(0.0, -p.v.dot(n));
        zone_volume += p.volume;
        approach += p.volume * speed_in;
        flux += p.volume * speed_in;
        const auto bin = std::min(bins - 1, static_cast<std::size_t>((b + half_w) / bin_w));
        bin_volume[bin] += p.volume;
    }
    double depth = 0.0, wet_width = 0.0;
    for (double v : bin_volume) {
        const double h = v / (bin_w * band);
        depth = std::max(depth, h);
        if (h >= s.params.wet_threshold) wet_width += bin_w;
    }
    const double rate = flux / band;
    log.max_speed = std::max(log.max_speed, zone_volume > 0 ? approach / zone_volume : 0.0);
    log.max_depth = std::max(log.max_depth, depth);
    log.max_face_width = std::max(log.max_face_width, wet_width);
    log.peak_flow_rate = std::max(log.peak_flow_rate, rate);
    log.flow_rate.push_back(rate);

    if (s.previous_positions.size() == s.particles.size()) {
        double crossed = 0.0;
        for (std::size_t i = 0; i < s.particles.size(); ++i) {
            const Eigen::Vector3d before = s.previous_positions[i] - c;
            const Eigen::Vector3d after = s.particles[i].x - c;
            if (std::abs(after.dot(t)) > half_w) continue;
            const double a0 = before.dot(n), a1 = after.dot(n);
            if (a0 >= 0 && a1 < 0) crossed += s.particles[i].volume;
            else if (a0 < 0 && a1 >= 0) crossed -= s.particles[i].volume;
        }
        log.overtopped_volume = std::max(0.0, log.overtopped_volume + crossed);
    }
    return log;
}

// ---------------------------------------------------------------------------
// Hash & checks

using detail::Fnv1a;

std::uint64_t state_hash(const SimulationState& s) {
    Fnv1a f;
    f.value(s.step);
    f.value(s.time);
    f.value(static_cast<std::uint64_t>(s.particles.size()));
    for (const auto& p : s.particles) {
        f.vec(p.x);
        f.vec(p.v);
        for (int i = 0; i < 9; ++i) f.value(p.C.data()[i]);
        f.value(p.mass);
        f.value(p.volume);
        f.value(p.J);
    }
    f.value(static_cast<std::uint64_t>(s.boulders.size()));
    for (const auto& b : s.boulders) {
        f.vec(b.center);
        f.vec(b.velocity);
        f.value(b.radius);
        f.value(b.mass);
    }
    for (const auto& b : s.colliders.barriers()) {
        f.text(b.id);
        f.vec(b.center);
        for (double v : {b.yaw, b.height, b.width, b.thickness, b.face_angle, b.alpha}) f.value(v);
    }
    return f.h;
}

double min_collider_distance(const SimulationState& s) {
    double worst = std::numeric_limits<double>::infinity();
    for (const auto& p : s.particles) worst = std::min(worst, s.colliders.min_distance(p.x));
    for (const auto& b : s.boulders) worst = std::min(worst, s.colliders.min_distance(b.center) - b.radius);
    return worst;
}

}  // namespace landsar
