pub mod mesh_oracle;
