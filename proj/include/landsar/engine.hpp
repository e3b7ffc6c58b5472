#pragma once

#include "landsar/colliders.hpp"
#include "landsar/raster.hpp"
#include "landsar/terrain.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace landsar {

struct BoulderParams {
    std::size_t count = 0;
    double radius_min = 0.3;
    double radius_max = 0.5;
    double density = 2650.0;  // kg/m^3
};

struct EngineParams {
    double dt = 2e-3;
    Eigen::Vector3d gravity{0.0, 0.0, -9.81};
    double rho = 2000.0;            // rest density of the slurry, kg/m^3
    double eos_stiffness = 5e5;     // Tait k, Pa
    double eos_gamma = 7.0;
    double drag_coefficient = 4.0;  // fluid-on-boulder drag rate, 1/s at full submersion
    double mu_t = 0.3;              // Coulomb friction at colliders
    double grid_spacing = 0.0;      // 0: use the terrain cell size
    int particles_per_cell = 8;
    int headroom_cells = 12;        // grid layers above the highest terrain sample
    double cfl = 0.4;
    double penetration_tol_factor = 0.05;
    double wet_threshold = 0.05;    // depth counted as wet at a barrier face, m
    BoulderParams boulders;
};

struct FluidParticle {
    Eigen::Vector3d x = Eigen::Vector3d::Zero();
    Eigen::Vector3d v = Eigen::Vector3d::Zero();
    Eigen::Matrix3d C = Eigen::Matrix3d::Zero();  // affine velocity
    double mass = 0.0;
    double volume = 0.0;  // rest volume
    double J = 1.0;       // volume ratio
};

struct Boulder {
    Eigen::Vector3d center = Eigen::Vector3d::Zero();
    Eigen::Vector3d velocity = Eigen::Vector3d::Zero();
    double radius = 0.0;
    double mass = 0.0;
};

/// Background lattice of nodes at origin + (i, j, k) * spacing, with
/// dims = cells per axis (nodes = cells + 1).
class MpmGrid {
public:
    struct Node {
        Eigen::Vector3d momentum;  // holds velocity after the grid update
        double mass;
    };
    struct StaticCollider {
        float distance;
        float nx, ny, nz;
    };

    MpmGrid() = default;
    MpmGrid(const Eigen::Vector3d& origin, double spacing, const Eigen::Vector3i& dims);

    const Eigen::Vector3d& origin() const { return origin_; }
    double spacing() const { return spacing_; }
    const Eigen::Vector3i& dims() const { return dims_; }
    std::size_t node_count() const { return nodes_.size(); }
    std::size_t index(int i, int j, int k) const {
        return (static_cast<std::size_t>(i) * stride_y_ + static_cast<std::size_t>(j)) * stride_z_ +
               static_cast<std::size_t>(k);
    }
    Eigen::Vector3d node_position(int i, int j, int k) const {
        return origin_ + spacing_ * Eigen::Vector3d(i, j, k);
    }

    std::vector<Node>& nodes() { return nodes_; }
    const std::vector<Node>& nodes() const { return nodes_; }
    std::vector<StaticCollider>& static_colliders() { return static_; }
    const std::vector<StaticCollider>& static_colliders() const { return static_; }

    double total_mass() const;
    /// Zeroes the nodes touched since the last clear.
    void clear();
    /// Node-index box [lo, hi] that the next transfer may touch.
    void set_active(const Eigen::Vector3i& lo, const Eigen::Vector3i& hi);
    const Eigen::Vector3i& active_lo() const { return active_lo_; }
    const Eigen::Vector3i& active_hi() const { return active_hi_; }

private:
    Eigen::Vector3d origin_ = Eigen::Vector3d::Zero();
    double spacing_ = 1.0;
    Eigen::Vector3i dims_ = Eigen::Vector3i::Zero();
    std::size_t stride_y_ = 0, stride_z_ = 0;
    std::vector<Node> nodes_;
    std::vector<StaticCollider> static_;
    Eigen::Vector3i active_lo_ = Eigen::Vector3i::Zero();
    Eigen::Vector3i active_hi_ = Eigen::Vector3i::Constant(-1);
};

/// Per-barrier accumulation of what the flow did at the face.
struct BarrierContactLog {
    double max_speed = 0.0;        // volume-weighted approach speed, m/s
    double max_depth = 0.0;        // depth in front of the face, m
    double max_face_width = 0.0;   // wet width along the face, m
    double overtopped_volume = 0.0;
    double peak_flow_rate = 0.0;
    std::vector<double> flow_rate;  // per recorded step, m^3/s
};

struct SimulationState {
    double time = 0.0;
    std::uint64_t step = 0;
    std::uint64_t seed = 0;
    EngineParams params;
    std::vector<FluidParticle> particles;
    std::vector<Boulder> boulders;
    MpmGrid grid;
    ColliderSet colliders;
    std::map<std::string, BarrierContactLog> contact_logs;
    std::vector<Eigen::Vector3d> previous_positions;  // particle positions at the start of the last step

    double penetration_tol() const { return params.penetration_tol_factor * grid.spacing(); }
    double total_fluid_mass() const;
    double total_fluid_volume() const;
    Eigen::Vector3d total_momentum() const;

    void add_barrier(const Barrier& b);
    void update_barrier(const Barrier& b);
    void remove_barrier(const std::string& id);
};

/// Optional explicit background grid (otherwise derived from the terrain).
struct GridOverride {
    Eigen::Vector3d origin;
    double spacing;
    Eigen::Vector3i dims;
};

/// Empty state over `terrain`: background grid sized to the terrain footprint
/// with headroom, static colliders baked, no particles.
SimulationState make_state(std::shared_ptr<const TerrainGrid> terrain, std::vector<Building> buildings,
                           const EngineParams& params, std::uint64_t seed,
                           std::optional<GridOverride> grid = std::nullopt);

/// Turns terrain collision on or off and rebakes the static node colliders.
void set_terrain_collision(SimulationState& state, bool enabled);

using Polygon = std::vector<Eigen::Vector2d>;

double polygon_area(const Polygon& poly);
bool point_in_polygon(const Polygon& poly, const Eigen::Vector2d& p);

/// Seeds `volume` cubic metres of fluid over `region`, stacked on the terrain,
/// plus the configured boulders. Deterministic in `state.seed`.
void init_release(SimulationState& state, const Polygon& region, double volume);

/// One MLS-MPM cycle. Throws StepError on NaN input or a CFL violation
/// before touching the state.
void step(SimulationState& state);

/// Flow depth per terrain sample: rest volume in the sample's column / cell area.
Raster depth_field(const SimulationState& state);
/// Volume-weighted horizontal particle speed per column; 0 where dry.
Raster velocity_field(const SimulationState& state);

/// Updates the contact log of `barrier_id` from the current particles.
/// Overtopping needs `previous_positions` and is skipped without them.
const BarrierContactLog& record_barrier_contact(SimulationState& state, const std::string& barrier_id);

/// FNV-1a over the evolving state (time, particles, boulders, barriers).
std::uint64_t state_hash(const SimulationState& state);

/// Largest violation of the non-penetration invariant: the most negative
/// signed distance of any particle (or boulder surface) to any collider.
double min_collider_distance(const SimulationState& state);

}  // namespace landsar
